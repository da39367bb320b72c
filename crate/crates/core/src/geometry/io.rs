//! JSON shape files and JSON Lines datasets.
//!
//! A shape is `{"vertices":[[x,y,z],...],"edges":[[i,j],...],"label":k}` with
//! `label` omitted when absent. Coordinates use the shortest decimal that
//! parses back to the same `f64`, so writing is canonical and reading a
//! written file is exact.

use super::ShapeGraph;
use crate::error::{Error, Result};

/// Parses and validates one shape (default degeneracy threshold).
pub fn read_shape(bytes: &[u8]) -> Result<ShapeGraph> {
    parse_one(bytes, None)
}

pub fn write_shape(g: &ShapeGraph) -> Vec<u8> {
    serde_json::to_vec(g).expect("shape graphs always serialize")
}

/// Reads one shape per non-blank line. Errors carry the 1-based line number.
pub fn read_jsonl(bytes: &[u8]) -> Result<Vec<ShapeGraph>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(None, e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_one(l.as_bytes(), Some(i + 1)))
        .collect()
}

pub fn write_jsonl(shapes: &[ShapeGraph]) -> Vec<u8> {
    let mut out = Vec::new();
    for g in shapes {
        out.extend_from_slice(&write_shape(g));
        out.push(b'\n');
    }
    out
}

fn parse_one(bytes: &[u8], line: Option<usize>) -> Result<ShapeGraph> {
    let g: ShapeGraph = serde_json::from_slice(bytes).map_err(|e| {
        let at = match line {
            Some(l) => Some(l),
            None => Some(e.line()),
        };
        Error::parse(at, format!("{e}"))
    })?;
    match g.check_default() {
        Ok(()) => Ok(g),
        // dataset lines get wrapped so the offending line is reported
        Err(e) if line.is_some() => Err(Error::parse(line, e.to_string())),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_json() {
        let g = read_shape(br#"{"vertices": [[0,0,0],[1,0,0]], "edges": [[0,1]]}"#).unwrap();
        assert_eq!(g.vertex_count(), 2);
        assert_eq!(g.label, None);
        assert_eq!(
            String::from_utf8(write_shape(&g)).unwrap(),
            r#"{"vertices":[[0.0,0.0,0.0],[1.0,0.0,0.0]],"edges":[[0,1]]}"#
        );
    }

    #[test]
    fn label_is_kept() {
        let g = read_shape(br#"{"vertices":[[0,0,0],[1,0,0]],"edges":[[0,1]],"label":3}"#).unwrap();
        assert_eq!(g.label, Some(3));
    }

    #[test]
    fn bad_index_is_reported() {
        let r = read_shape(br#"{"vertices":[[0,0,0],[1,0,0],[0,1,0]],"edges":[[0,99]]}"#);
        assert!(matches!(r, Err(Error::IndexOutOfRange { index: 99, .. })));
    }

    #[test]
    fn syntax_error_has_line() {
        let r = read_shape(b"{\n\"vertices\": [[0,0,0],\n[1,0]]}");
        match r {
            Err(Error::Parse { line: Some(3), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jsonl_reports_line() {
        let good = r#"{"vertices":[[0,0,0],[1,0,0]],"edges":[[0,1]]}"#;
        let bad = r#"{"vertices":[[0,0,0],[1,0,0]],"edges":[[0,5]]}"#;
        let text = format!("{good}\n\n{bad}\n");
        match read_jsonl(text.as_bytes()) {
            Err(Error::Parse { line: Some(3), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_is_byte_stable() {
        let src = br#"{"vertices":[[0.1,0.2,0.30000000000000004],[1e-7,2,3]],"edges":[[1,0]],"label":0}"#;
        let once = write_shape(&read_shape(src).unwrap());
        let twice = write_shape(&read_shape(&once).unwrap());
        assert_eq!(once, twice);
    }

    proptest! {
        #[test]
        fn roundtrip_is_exact(
            a in prop::array::uniform3(-1e6f64..1e6),
            b in prop::array::uniform3(-1e6f64..1e6),
            c in prop::array::uniform3(any::<f64>().prop_filter("finite", |x| x.is_finite())),
        ) {
            let g = ShapeGraph::new(vec![a, b, c], vec![[0, 1], [1, 2]]).with_label(Some(1));
            prop_assume!(g.check_default().is_ok());
            let back = read_shape(&write_shape(&g)).unwrap();
            for (p, q) in g.vertices.iter().zip(&back.vertices) {
                for k in 0..3 {
                    prop_assert_eq!(p[k].to_bits(), q[k].to_bits());
                }
            }
            prop_assert_eq!(back, g);
        }
    }
}
