//! Canonical frame serialization and hashing, used to compare results
//! across backends and optimization levels.
//!
//! The canonical form is one schema line (`name:dtype` pairs) followed by one
//! line per row; cells are rendered scalars joined by a unit separator.
//! Category columns are an encoding detail, so they canonicalize as text.
//! Hashes are FNV-1a 64 over the canonical text, with an order-insensitive
//! variant that sorts the row lines first (for programs whose output order is
//! not pinned by a sort or head).

use crate::frame::{Dtype, Frame};

const SEP: char = '\u{1f}';

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn escape_into(s: &str, out: &mut String) {
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            SEP => out.push_str("\\s"),
            other => out.push(other),
        }
    }
}

fn schema_line(f: &Frame) -> String {
    let mut line = String::new();
    for (i, c) in f.columns().iter().enumerate() {
        if i > 0 {
            line.push(SEP);
        }
        escape_into(&c.name, &mut line);
        line.push(':');
        let dt = match c.dtype() {
            Dtype::Category => Dtype::Text,
            d => d,
        };
        line.push_str(dt.name());
    }
    line
}

fn row_lines(f: &Frame) -> Vec<String> {
    (0..f.rows())
        .map(|i| {
            let mut line = String::new();
            for (ci, c) in f.columns().iter().enumerate() {
                if ci > 0 {
                    line.push(SEP);
                }
                escape_into(&c.get(i).render(), &mut line);
            }
            line
        })
        .collect()
}

/// Order-preserving canonical text.
pub fn canonical_text(f: &Frame) -> String {
    let mut out = schema_line(f);
    out.push('\n');
    for line in row_lines(f) {
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Canonical text with rows sorted lexicographically.
pub fn canonical_text_sorted(f: &Frame) -> String {
    let mut rows = row_lines(f);
    rows.sort_unstable();
    let mut out = schema_line(f);
    out.push('\n');
    for line in rows {
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// FNV-1a 64 hash of the canonical form. Pass `order_sensitive = true` when
/// the program pins row order (sort_values or head on the result path).
pub fn frame_hash(f: &Frame, order_sensitive: bool) -> u64 {
    let text = if order_sensitive {
        canonical_text(f)
    } else {
        canonical_text_sorted(f)
    };
    fnv1a(text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{ColumnBuilder, Scalar};

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    fn two_col(order: &[i64]) -> Frame {
        let mut a = ColumnBuilder::new("a", Dtype::Int64);
        let mut t = ColumnBuilder::new("t", Dtype::Text);
        for &v in order {
            a.push(Scalar::Int(v)).unwrap();
            t.push(Scalar::Text(format!("v{v}"))).unwrap();
        }
        Frame::new(vec![a.finish(), t.finish()]).unwrap()
    }

    #[test]
    fn sorted_hash_ignores_row_order() {
        let f1 = two_col(&[1, 2, 3]);
        let f2 = two_col(&[3, 1, 2]);
        assert_eq!(frame_hash(&f1, false), frame_hash(&f2, false));
        assert_ne!(frame_hash(&f1, true), frame_hash(&f2, true));
    }

    #[test]
    fn category_canonicalizes_as_text() {
        let mut t = ColumnBuilder::new("c", Dtype::Text);
        let mut c = ColumnBuilder::new("c", Dtype::Category);
        for s in ["x", "y", "x"] {
            t.push(Scalar::Text(s.to_string())).unwrap();
            c.push(Scalar::Text(s.to_string())).unwrap();
        }
        let ft = Frame::new(vec![t.finish()]).unwrap();
        let fc = Frame::new(vec![c.finish()]).unwrap();
        assert_eq!(canonical_text(&ft), canonical_text(&fc));
    }

    #[test]
    fn cells_with_separators_do_not_collide()  {
        let mut a = ColumnBuilder::new("a", Dtype::Text);
        a.push(Scalar::Text(format!("x{}y", '\u{1f}'))).unwrap();
        let mut b = ColumnBuilder::new("a", Dtype::Text);
        b.push(Scalar::Text("x".to_string())).unwrap();
        let f1 = Frame::new(vec![a.finish()]).unwrap();
        let f2 = Frame::new(vec![b.finish()]).unwrap();
        assert_ne!(canonical_text(&f1), canonical_text(&f2));
    }
}
