//! NMEA-0183 location sentences and great-circle distance.
//!
//! Only `GGA` and `RMC` sentences carry fixes here. Any other well-framed
//! sentence type is reported as [`ParseOutcome::Unsupported`] so an ingest
//! loop can skip receiver chatter without treating it as an error.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used for all distance computations.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NmeaError {
    #[error("checksum mismatch: computed {computed}, sentence carries {found}")]
    ChecksumMismatch { computed: String, found: String },
    #[error("malformed sentence: {0}")]
    FormatError(String),
    #[error("receiver reports void fix")]
    VoidFix,
}

fn format_err(msg: impl Into<String>) -> NmeaError {
    NmeaError::FormatError(msg.into())
}

/// A latitude/longitude pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixQuality {
    NoFix,
    Fix,
    Void,
}

/// One decoded position report.
///
/// `time_of_day` is UTC seconds since midnight; NMEA `GGA` carries no date, so
/// callers stamp the date on arrival. Coordinates of a fix whose quality is not
/// [`FixQuality::Fix`] must not be used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoFix {
    pub time_of_day: u32,
    pub latitude: f64,
    pub longitude: f64,
    pub quality: FixQuality,
    pub source_sentence: String,
}

impl GeoFix {
    pub fn position(&self) -> Option<LatLon> {
        (self.quality == FixQuality::Fix).then(|| LatLon::new(self.latitude, self.longitude))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseOutcome {
    Fix(GeoFix),
    /// Well-formed sentence of a type we do not decode (e.g. `GPGSV`).
    Unsupported(String),
}

/// A framed sentence: `$<talker_type>,<fields...>*<checksum>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NmeaSentence {
    pub raw_line: String,
    pub talker_type: String,
    pub fields: Vec<String>,
    pub checksum: String,
}

impl NmeaSentence {
    /// Validates framing and checksum; does not interpret the fields.
    pub fn parse(line: &str) -> Result<Self, NmeaError> {
        let line = line.trim_end_matches(['\r', '\n']);
        if !line.is_ascii() {
            return Err(format_err("non-ASCII bytes"));
        }
        let body = line
            .strip_prefix('$')
            .ok_or_else(|| format_err("missing '$' start delimiter"))?;
        let star = body
            .rfind('*')
            .ok_or_else(|| format_err("missing '*' checksum delimiter"))?;
        let (payload, tail) = (&body[..star], &body[star + 1..]);
        if tail.len() != 2 || !tail.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(format_err("checksum must be exactly two hex digits"));
        }
        if payload.contains(['$', '*']) {
            return Err(format_err("delimiter inside payload"));
        }
        let computed = nmea_checksum(payload.as_bytes());
        if !computed.eq_ignore_ascii_case(tail) {
            return Err(NmeaError::ChecksumMismatch {
                computed,
                found: tail.to_string(),
            });
        }
        let mut parts = payload.split(',');
        let talker_type = parts.next().unwrap_or_default().to_string();
        if talker_type.len() != 5 || !talker_type.bytes().all(|b| b.is_ascii_alphanumeric()) {
            return Err(format_err(format!("bad talker/type {talker_type:?}")));
        }
        Ok(Self {
            raw_line: line.to_string(),
            talker_type,
            fields: parts.map(str::to_string).collect(),
            checksum: tail.to_ascii_uppercase(),
        })
    }

    /// Sentence type without the talker prefix (`GGA`, `RMC`, ...).
    pub fn sentence_type(&self) -> &str {
        &self.talker_type[2..]
    }

    /// Re-frames the sentence from its parts with a freshly computed checksum.
    pub fn to_line(&self) -> String {
        frame_sentence(&self.talker_type, &self.fields)
    }
}

/// Builds `$<talker_type>,<f1>,...*CC` from parts.
pub fn frame_sentence<S: AsRef<str>>(talker_type: &str, fields: &[S]) -> String {
    let mut payload = talker_type.to_string();
    for f in fields {
        payload.push(',');
        payload.push_str(f.as_ref());
    }
    let cs = nmea_checksum(payload.as_bytes());
    format!("${payload}*{cs}")
}

/// Uppercase hex of the XOR of all payload bytes (between `$` and `*`).
pub fn nmea_checksum(payload: &[u8]) -> String {
    let x = payload.iter().fold(0u8, |acc, b| acc ^ b);
    format!("{x:02X}")
}

/// Converts NMEA `ddmm.mmmm` / `dddmm.mmmm` plus hemisphere to signed degrees.
pub fn ddmm_to_degrees(coordinate: &str, hemisphere: char) -> Result<f64, NmeaError> {
    let sign = match hemisphere {
        'N' | 'E' => 1.0,
        'S' | 'W' => -1.0,
        other => return Err(format_err(format!("bad hemisphere {other:?}"))),
    };
    let int_len = coordinate.find('.').unwrap_or(coordinate.len());
    if !(3..=5).contains(&int_len) {
        return Err(format_err(format!("bad coordinate {coordinate:?}")));
    }
    let valid_chars = coordinate
        .bytes()
        .enumerate()
        .all(|(i, b)| b.is_ascii_digit() || (b == b'.' && i == int_len));
    if !valid_chars || coordinate.ends_with('.') {
        return Err(format_err(format!("bad coordinate {coordinate:?}")));
    }
    let deg_len = int_len - 2;
    let degrees: f64 = coordinate[..deg_len]
        .parse()
        .map_err(|_| format_err(format!("bad degrees in {coordinate:?}")))?;
    let minutes: f64 = coordinate[deg_len..]
        .parse()
        .map_err(|_| format_err(format!("bad minutes in {coordinate:?}")))?;
    if minutes >= 60.0 {
        return Err(format_err(format!("minutes >= 60 in {coordinate:?}")));
    }
    Ok(sign * (degrees + minutes / 60.0))
}

fn parse_time_of_day(field: &str) -> Result<u32, NmeaError> {
    let whole = field.split('.').next().unwrap_or_default();
    if whole.len() != 6 || !whole.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format_err(format!("bad UTC time {field:?}")));
    }
    if let Some(frac) = field.split_once('.').map(|(_, f)| f) {
        if !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format_err(format!("bad UTC time {field:?}")));
        }
    }
    let n = |r: std::ops::Range<usize>| whole[r].parse::<u32>().unwrap_or(99);
    let (h, m, s) = (n(0..2), n(2..4), n(4..6));
    // 60 is allowed for leap seconds
    if h > 23 || m > 59 || s > 60 {
        return Err(format_err(format!("UTC time out of range {field:?}")));
    }
    Ok(h * 3600 + m * 60 + s)
}

fn single_char(field: &str, what: &str) -> Result<char, NmeaError> {
    let mut chars = field.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(format_err(format!("bad {what} field {field:?}"))),
    }
}

fn parse_position(fields: &[String]) -> Result<LatLon, NmeaError> {
    let ns = single_char(&fields[1], "N/S")?;
    let ew = single_char(&fields[3], "E/W")?;
    if !matches!(ns, 'N' | 'S') || !matches!(ew, 'E' | 'W') {
        return Err(format_err("hemisphere letters out of place"));
    }
    let pos = LatLon::new(ddmm_to_degrees(&fields[0], ns)?, ddmm_to_degrees(&fields[2], ew)?);
    if !pos.is_valid() {
        return Err(format_err("coordinate out of range"));
    }
    Ok(pos)
}

fn parse_gga(s: &NmeaSentence) -> Result<GeoFix, NmeaError> {
    if s.fields.len() != 14 {
        return Err(format_err(format!("GGA expects 14 fields, got {}", s.fields.len())));
    }
    let time_of_day = parse_time_of_day(&s.fields[0])?;
    let quality_code = single_char(&s.fields[5], "fix quality")?;
    let quality = match quality_code {
        '0' => FixQuality::NoFix,
        '1'..='8' => FixQuality::Fix,
        _ => return Err(format_err(format!("bad fix quality {quality_code:?}"))),
    };
    let position = if quality == FixQuality::NoFix && s.fields[1].is_empty() {
        LatLon::new(0.0, 0.0)
    } else {
        parse_position(&s.fields[1..5])?
    };
    Ok(GeoFix {
        time_of_day,
        latitude: position.lat,
        longitude: position.lon,
        quality,
        source_sentence: s.talker_type.clone(),
    })
}

fn parse_rmc(s: &NmeaSentence) -> Result<GeoFix, NmeaError> {
    if !(11..=13).contains(&s.fields.len()) {
        return Err(format_err(format!("RMC expects 11-13 fields, got {}", s.fields.len())));
    }
    let time_of_day = parse_time_of_day(&s.fields[0])?;
    match s.fields[1].as_str() {
        "A" => {}
        "V" => return Err(NmeaError::VoidFix),
        other => return Err(format_err(format!("bad RMC status {other:?}"))),
    }
    let position = parse_position(&s.fields[2..6])?;
    Ok(GeoFix {
        time_of_day,
        latitude: position.lat,
        longitude: position.lon,
        quality: FixQuality::Fix,
        source_sentence: s.talker_type.clone(),
    })
}

/// Parses one sentence into a fix, or reports it as unsupported.
pub fn parse_nmea(line: &str) -> Result<ParseOutcome, NmeaError> {
    let sentence = NmeaSentence::parse(line)?;
    match sentence.sentence_type() {
        "GGA" => parse_gga(&sentence).map(ParseOutcome::Fix),
        "RMC" => parse_rmc(&sentence).map(ParseOutcome::Fix),
        _ => Ok(ParseOutcome::Unsupported(sentence.talker_type)),
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.clamp(0.0, 1.0).sqrt().asin()
}

impl fmt::Display for LatLon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6})", self.lat, self.lon)
    }
}

/// Formats signed degrees as an NMEA `ddmm.mmmm` field plus hemisphere.
///
/// Used to synthesize sentences for scenarios and tests.
pub fn degrees_to_ddmm(value: f64, is_latitude: bool) -> (String, char) {
    let hemi = match (is_latitude, value < 0.0) {
        (true, false) => 'N',
        (true, true) => 'S',
        (false, false) => 'E',
        (false, true) => 'W',
    };
    let abs = value.abs();
    let mut deg = abs.trunc();
    let mut minutes = ((abs - deg) * 60.0 * 10_000.0).round() / 10_000.0;
    if minutes >= 60.0 {
        deg += 1.0;
        minutes = 0.0;
    }
    let width = if is_latitude { 2 } else { 3 };
    (format!("{:0width$}{:07.4}", deg as u32, minutes, width = width), hemi)
}

/// Builds a valid `GPGGA` sentence for the given position and UTC seconds-of-day.
pub fn gga_sentence(pos: LatLon, time_of_day: u32) -> String {
    let (lat, ns) = degrees_to_ddmm(pos.lat, true);
    let (lon, ew) = degrees_to_ddmm(pos.lon, false);
    let t = format!(
        "{:02}{:02}{:02}",
        time_of_day / 3600,
        (time_of_day / 60) % 60,
        time_of_day % 60
    );
    frame_sentence(
        "GPGGA",
        &[
            t.as_str(),
            &lat,
            &ns.to_string(),
            &lon,
            &ew.to_string(),
            "1",
            "08",
            "0.9",
            "150.0",
            "M",
            "-33.0",
            "M",
            "",
            "",
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANONICAL: &str = "$GPGGA,123519,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,*47";

    #[test]
    fn checksum_examples() {
        assert_eq!(nmea_checksum(b""), "00");
        assert_eq!(nmea_checksum(b"A"), "41");
        assert_eq!(nmea_checksum(b"AB"), "03");
    }

    #[test]
    fn ddmm_examples() {
        assert_eq!(ddmm_to_degrees("0000.000", 'N').unwrap(), 0.0);
        assert!((ddmm_to_degrees("4807.038", 'N').unwrap() - 48.1173).abs() < 1e-9);
        assert!((ddmm_to_degrees("01131.000", 'W').unwrap() + 11.516_666_666_666_667).abs() < 1e-9);
        assert!(matches!(
            ddmm_to_degrees("4860.000", 'N'),
            Err(NmeaError::FormatError(_))
        ));
        assert!(ddmm_to_degrees("48a7.0", 'N').is_err());
        assert!(ddmm_to_degrees("4807.0", 'Q').is_err());
    }

    #[test]
    fn canonical_gga() {
        let ParseOutcome::Fix(fix) = parse_nmea(CANONICAL).unwrap() else {
            panic!("expected fix")
        };
        assert_eq!(fix.time_of_day, 12 * 3600 + 35 * 60 + 19);
        assert!((fix.latitude - 48.1173).abs() < 1e-6);
        assert!((fix.longitude - 11.516_667).abs() < 1e-6);
        assert_eq!(fix.quality, FixQuality::Fix);
        assert_eq!(fix.source_sentence, "GPGGA");
    }

    #[test]
    fn crlf_is_accepted() {
        assert!(parse_nmea(&format!("{CANONICAL}\r\n")).is_ok());
    }

    #[test]
    fn wrong_checksum_rejected() {
        let bad = CANONICAL.replace("*47", "*48");
        assert!(matches!(parse_nmea(&bad), Err(NmeaError::ChecksumMismatch { .. })));
    }

    #[test]
    fn rmc_void_and_active() {
        let void = frame_sentence(
            "GPRMC",
            &[
                "123519",
                "V",
                "4807.038",
                "N",
                "01131.000",
                "E",
                "022.4",
                "084.4",
                "230394",
                "003.1",
                "W",
            ],
        );
        assert_eq!(parse_nmea(&void), Err(NmeaError::VoidFix));
        let active = void.replace(",V,", ",A,");
        let active = frame_sentence("GPRMC", &active[7..active.len() - 3].split(',').collect::<Vec<_>>());
        let ParseOutcome::Fix(fix) = parse_nmea(&active).unwrap() else {
            panic!()
        };
        assert_eq!(fix.quality, FixQuality::Fix);
        assert!((fix.latitude - 48.1173).abs() < 1e-9);
    }

    #[test]
    fn gga_no_fix_is_not_consumable() {
        let line = frame_sentence(
            "GPGGA",
            &["000001", "", "", "", "", "0", "00", "", "", "", "", "", "", ""],
        );
        let ParseOutcome::Fix(fix) = parse_nmea(&line).unwrap() else {
            panic!()
        };
        assert_eq!(fix.quality, FixQuality::NoFix);
        assert!(fix.position().is_none());
    }

    #[test]
    fn other_types_are_unsupported() {
        let line = frame_sentence("GPGSV", &["1", "1", "00"]);
        assert_eq!(parse_nmea(&line), Ok(ParseOutcome::Unsupported("GPGSV".into())));
    }

    #[test]
    fn field_count_enforced() {
        let line = frame_sentence("GPGGA", &["123519", "4807.038", "N"]);
        assert!(matches!(parse_nmea(&line), Err(NmeaError::FormatError(_))));
    }

    #[test]
    fn haversine_examples() {
        let o = LatLon::new(0.0, 0.0);
        assert_eq!(haversine_m(o, o), 0.0);
        let d = haversine_m(o, LatLon::new(1.0, 0.0));
        assert!((d - 111_194.93).abs() < 0.01, "{d}");
        let far = haversine_m(o, LatLon::new(0.0, 180.0));
        assert!(far <= std::f64::consts::PI * EARTH_RADIUS_M);
    }

    #[test]
    fn synthesized_gga_round_trips() {
        let p = LatLon::new(38.64837, -90.30335);
        let line = gga_sentence(p, 3600 * 7 + 61);
        let ParseOutcome::Fix(fix) = parse_nmea(&line).unwrap() else {
            panic!()
        };
        assert_eq!(fix.time_of_day, 3600 * 7 + 61);
        assert!(haversine_m(p, fix.position().unwrap()) < 0.2);
    }
}
