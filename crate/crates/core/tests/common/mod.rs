//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls into the code under test for the quantity it checks.

#![allow(dead_code)]

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smartenergy::LatLon;

pub const R: f64 = 6_371_000.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// XOR of payload bytes, written out longhand.
pub fn xor_oracle(payload: &[u8]) -> u8 {
    let mut x = 0u8;
    for i in 0..payload.len() {
        x = x ^ payload[i];
    }
    x
}

/// Great-circle distance through the chord of the unit-sphere vectors.
pub fn chord_distance(a: LatLon, b: LatLon) -> f64 {
    let v = |p: LatLon| {
        let (la, lo) = (p.lat.to_radians(), p.lon.to_radians());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    };
    let (p, q) = (v(a), v(b));
    let c = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    2.0 * R * (c / 2.0).min(1.0).asin()
}

/// Point at `distance_m` from `origin` along `bearing_deg` on the sphere.
pub fn destination(origin: LatLon, bearing_deg: f64, distance_m: f64) -> LatLon {
    let d = distance_m / R;
    let th = bearing_deg.to_radians();
    let (p1, l1) = (origin.lat.to_radians(), origin.lon.to_radians());
    let p2 = (p1.sin() * d.cos() + p1.cos() * d.sin() * th.cos()).asin();
    let l2 = l1 + (th.sin() * d.sin() * p1.cos()).atan2(d.cos() - p1.sin() * p2.sin());
    LatLon::new(p2.to_degrees(), l2.to_degrees())
}

fn q(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Least-squares coefficients from the exact normal equations
/// (XᵀX)β = Xᵀy, solved by Gauss-Jordan elimination over rationals.
/// `columns` excludes the intercept, which is prepended.
pub fn normal_equations_oracle(y: &[f64], columns: &[Vec<f64>]) -> Vec<f64> {
    let n = y.len();
    let mut design: Vec<Vec<BigRational>> = vec![vec![BigRational::from_integer(1.into()); n]];
    for c in columns {
        design.push(c.iter().map(|&v| q(v)).collect());
    }
    let yq: Vec<BigRational> = y.iter().map(|&v| q(v)).collect();
    let p = design.len();
    let mut m: Vec<Vec<BigRational>> = vec![vec![BigRational::zero(); p + 1]; p];
    for i in 0..p {
        for j in i..p {
            let mut s = BigRational::zero();
            for k in 0..n {
                s += &design[i][k] * &design[j][k];
            }
            m[i][j] = s.clone();
            m[j][i] = s;
        }
        let mut s = BigRational::zero();
        for k in 0..n {
            s += &design[i][k] * &yq[k];
        }
        m[i][p] = s;
    }
    for col in 0..p {
        let pivot = (col..p).find(|&r| !m[r][col].is_zero()).expect("full rank");
        m.swap(col, pivot);
        let inv = BigRational::from_integer(1.into()) / &m[col][col];
        for j in col..=p {
            m[col][j] = &m[col][j] * &inv;
        }
        for r in 0..p {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                for j in col..=p {
                    let t = &f * &m[col][j];
                    m[r][j] -= t;
                }
            }
        }
    }
    m.iter().map(|row| row[p].to_f64().expect("representable")).collect()
}

/// Coefficient of determination for given coefficients (intercept first).
pub fn r_squared_oracle(y: &[f64], columns: &[Vec<f64>], beta: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..y.len() {
        let mut fit = beta[0];
        for (j, c) in columns.iter().enumerate() {
            fit += beta[j + 1] * c[i];
        }
        ss_res += (y[i] - fit).powi(2);
        ss_tot += (y[i] - mean).powi(2);
    }
    1.0 - ss_res / ss_tot
}

/// Product-moment correlation from raw sums, over rationals.
pub fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = BigRational::from_integer((a.len() as i64).into());
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (
        BigRational::zero(),
        BigRational::zero(),
        BigRational::zero(),
        BigRational::zero(),
        BigRational::zero(),
    );
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (q(x), q(y));
        sa += &x;
        sb += &y;
        saa += &x * &x;
        sbb += &y * &y;
        sab += &x * &y;
    }
    let cov = &n * &sab - &sa * &sb;
    let va = &n * &saa - &sa * &sa;
    let vb = &n * &sbb - &sb * &sb;
    cov.to_f64().unwrap() / (va.to_f64().unwrap() * vb.to_f64().unwrap()).sqrt()
}

/// A daily-weather-like dataset: temperature (°F) and humidity (%) drawn at
/// random, with `target` built from them plus Gaussian-ish noise of scale
/// `sigma` (sum of uniforms).
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn weather_dataset(seed: u64, n: usize, sigma: f64, target: impl Fn(f64, f64) -> f64) -> Dataset {
    let mut r = rng(seed);
    let mut d = Dataset {
        x: vec![],
        y: vec![],
        z: vec![],
    };
    for _ in 0..n {
        let x = r.gen_range(10.0..95.0);
        let y = r.gen_range(20.0..95.0);
        let noise: f64 = (0..12).map(|_| r.gen::<f64>()).sum::<f64>() - 6.0;
        d.x.push(x);
        d.y.push(y);
        d.z.push(target(x, y) + sigma * noise);
    }
    d
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE)
}

pub mod policy {
    use rand::seq::SliceRandom;
    use rand::Rng;

    use smartenergy::config::Control;
    use smartenergy::devicenet::PowerState;
    use smartenergy::policy::{Action, Condition, DeviceScope, PolicyEngine, PolicyRule, PresenceContext};
    use smartenergy::presence::Zone;

    pub const ZONES: [Zone; 3] = [Zone::Unknown, Zone::Inside, Zone::Outside];

    /// Rules scattered over every realm, each scoped to a random non-empty
    /// subset of that realm's subtree (exempt and manual devices included).
    pub fn random_rules(r: &mut impl Rng, engine: &PolicyEngine, count: usize) -> Vec<PolicyRule> {
        let realms: Vec<String> = engine.realms().realms().map(|x| x.realm_id.clone()).collect();
        (0..count)
            .map(|i| {
                let realm = realms.choose(r).unwrap().clone();
                let mut pool: Vec<String> = engine
                    .devices()
                    .filter(|d| engine.realms().is_ancestor_or_self(&realm, &d.realm))
                    .map(|d| d.device_id.clone())
                    .collect();
                pool.shuffle(r);
                let k = r.gen_range(1..=pool.len());
                pool.truncate(k);
                let condition = if r.gen_bool(0.3) {
                    Condition::ALWAYS
                } else {
                    let fence = *["home", "office"].choose(r).unwrap();
                    Condition::presence("alice", fence, *ZONES.choose(r).unwrap())
                };
                let action = *[Action::MandateOn, Action::MandateOff, Action::Defer]
                    .choose(r)
                    .unwrap();
                PolicyRule {
                    rule_id: format!("r{i}"),
                    realm_id: realm,
                    device_scope: DeviceScope::Devices(pool),
                    condition,
                    action,
                    priority_note: String::new(),
                }
            })
            .collect()
    }

    pub fn random_context(r: &mut impl Rng) -> PresenceContext {
        let mut ctx = PresenceContext::default();
        ctx.set("alice", "home", *ZONES.choose(r).unwrap());
        ctx.set("alice", "office", *ZONES.choose(r).unwrap());
        ctx
    }

    /// Desired state by brute force: walk the realm chain root-first and stop
    /// at the first realm holding an applicable mandate; Off wins inside it.
    pub fn dominance_oracle(
        engine: &PolicyEngine,
        device: &str,
        ctx: &PresenceContext,
    ) -> Option<(String, PowerState)> {
        let info = engine.device(device)?;
        for realm in engine.realms().chain(&info.realm) {
            let mut on = false;
            let mut off = false;
            for rule in engine.rules() {
                if rule.rule.realm_id != realm.realm_id
                    || !rule.devices.contains(device)
                    || !ctx.holds(&rule.rule.condition)
                {
                    continue;
                }
                match rule.rule.action {
                    Action::MandateOn => on = true,
                    Action::MandateOff => off = true,
                    Action::Defer => {}
                }
            }
            if off {
                return Some((realm.realm_id.clone(), PowerState::Off));
            }
            if on {
                return Some((realm.realm_id.clone(), PowerState::On));
            }
        }
        None
    }

    pub fn is_policy_controlled(engine: &PolicyEngine, device: &str) -> bool {
        engine.device(device).is_some_and(|d| d.control == Control::Policy)
    }
}
