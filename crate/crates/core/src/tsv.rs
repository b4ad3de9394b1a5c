//! Keypoint annotation and prediction files.
//!
//! UTF-8, tab separated, one nucleus per row:
//! `slide_id tile_id x y class confidence [stain_label]`.
//! Lines starting with `#` are comments. A first non-comment row whose first
//! field is `slide_id` is a header.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::keypoints::{Compartment, Keypoint};
use crate::stain::StainClass;

pub const HEADER: [&str; 7] = ["slide_id", "tile_id", "x", "y", "class", "confidence", "stain_label"];

/// One TSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointRecord {
    pub slide_id: String,
    pub tile_id: String,
    pub keypoint: Keypoint,
    pub stain_label: Option<StainClass>,
}

/// `(slide_id, tile_id)`.
pub type TileKey = (String, String);

impl KeypointRecord {
    pub fn key(&self) -> TileKey {
        (self.slide_id.clone(), self.tile_id.clone())
    }
}

fn parse_err(path: Option<&Path>, line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.map(Path::to_path_buf),
        line,
        field: field.into(),
        message: message.into(),
    }
}

/// Parses keypoint rows. `path` only labels errors.
pub fn parse_keypoints(text: &str, path: Option<&Path>) -> Result<Vec<KeypointRecord>> {
    let mut out = Vec::new();
    let mut seen_data = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() || row.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = row.split('\t').map(str::trim).collect();
        if !seen_data && cols[0] == HEADER[0] {
            seen_data = true;
            continue;
        }
        seen_data = true;
        if cols.len() != 6 && cols.len() != 7 {
            return Err(parse_err(path, line, "row", format!("expected 6 or 7 columns, found {}", cols.len())));
        }
        let num = |idx: usize| -> Result<f64> {
            cols[idx]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line, HEADER[idx], format!("not a finite number: {:?}", cols[idx])))
        };
        let (x, y, confidence) = (num(2)?, num(3)?, num(5)?);
        if !(0.0..=1.0).contains(&confidence) {
            return Err(parse_err(path, line, "confidence", format!("{confidence} outside [0, 1]")));
        }
        let class: Compartment = cols[4].parse().map_err(|m: String| parse_err(path, line, "class", m))?;
        let stain_label = match cols.get(6) {
            Some(s) if !s.is_empty() => {
                Some(s.parse::<StainClass>().map_err(|m| parse_err(path, line, "stain_label", m))?)
            }
            _ => None,
        };
        for (idx, name) in [(0, "slide_id"), (1, "tile_id")] {
            if cols[idx].is_empty() {
                return Err(parse_err(path, line, name, "empty identifier"));
            }
        }
        out.push(KeypointRecord {
            slide_id: cols[0].to_string(),
            tile_id: cols[1].to_string(),
            keypoint: Keypoint::new(x, y, class, confidence),
            stain_label,
        });
    }
    Ok(out)
}

/// Serializes rows with a header. `comments` are emitted first as `# ` lines.
/// Floats use the shortest representation that parses back exactly.
pub fn format_keypoints(records: &[KeypointRecord], comments: &[String]) -> String {
    let mut s = String::new();
    for c in comments {
        let _ = writeln!(s, "# {c}");
    }
    s.push_str(&HEADER.join("\t"));
    s.push('\n');
    for r in records {
        let k = &r.keypoint;
        let _ = write!(s, "{}\t{}\t{}\t{}\t{}\t{}", r.slide_id, r.tile_id, k.x, k.y, k.class, k.confidence);
        if let Some(l) = r.stain_label {
            let _ = write!(s, "\t{l}");
        }
        s.push('\n');
    }
    s
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<Vec<KeypointRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keypoints(&text, Some(path))
}

pub fn write_keypoints(path: impl AsRef<Path>, records: &[KeypointRecord], comments: &[String]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_keypoints(records, comments)).map_err(|e| Error::io(path, e))
}

/// Groups rows by tile in key order; rows keep file order within a tile.
pub fn group_by_tile(records: &[KeypointRecord]) -> BTreeMap<TileKey, Vec<KeypointRecord>> {
    let mut map: BTreeMap<TileKey, Vec<KeypointRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.key()).or_default().push(r.clone());
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_with_and_without_labels() {
        let text = "# produced by test\nslide_id\ttile_id\tx\ty\tclass\tconfidence\tstain_label\n\
                    s1\tt1\t10\t12.5\tstroma\t0.9\tweak\ns1\tt1\t3\t4\tepithelium\t1\n";
        let rows = parse_keypoints(text, None).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].stain_label, Some(StainClass::Weak));
        assert_eq!(rows[1].stain_label, None);
        assert_eq!(rows[1].keypoint.class, Compartment::Epithelium);
    }

    #[test]
    fn errors_name_line_and_field() {
        let err = parse_keypoints("s\tt\t1\tx\tstroma\t1\n", Some(Path::new("a.tsv"))).unwrap_err();
        match err {
            Error::Parse { line, field, .. } => assert_eq!((line, field.as_str()), (1, "y")),
            e => panic!("{e}"),
        }
        let err = parse_keypoints("s\tt\t1\t1\tnucleus\t1\n", None).unwrap_err();
        assert!(err.to_string().contains("class"), "{err}");
        assert!(parse_keypoints("s\tt\t1\t1\tstroma\t1.5\n", None).is_err());
        assert!(parse_keypoints("s\tt\t1\t1\n", None).is_err());
    }

    #[test]
    fn grouping_sorts_tiles() {
        let text = "b\tt2\t1\t1\tstroma\t1\na\tt9\t1\t1\tstroma\t1\nb\tt2\t2\t2\tstroma\t1\n";
        let g = group_by_tile(&parse_keypoints(text, None).unwrap());
        let keys: Vec<_> = g.keys().cloned().collect();
        assert_eq!(keys, vec![("a".into(), "t9".into()), ("b".into(), "t2".into())]);
        assert_eq!(g[&("b".to_string(), "t2".to_string())].len(), 2);
    }

    proptest! {
        #[test]
        fn roundtrip(rows in proptest::collection::vec(
            (0.0f64..512.0, 0.0f64..512.0, any::<bool>(), 0.0f64..=1.0, proptest::option::of(0usize..4)), 0..20)
        ) {
            let recs: Vec<KeypointRecord> = rows.iter().enumerate().map(|(i, &(x, y, c, conf, l))| KeypointRecord {
                slide_id: format!("s{}", i % 3),
                tile_id: format!("t{i}"),
                keypoint: Keypoint::new(x, y, if c { Compartment::Stroma } else { Compartment::Epithelium }, conf),
                stain_label: l.map(|j| StainClass::ALL[j]),
            }).collect();
            let text = format_keypoints(&recs, &["cfg a=1".into()]);
            prop_assert_eq!(parse_keypoints(&text, None).unwrap(), recs);
        }
    }
}
