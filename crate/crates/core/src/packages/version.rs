use std::cmp::Ordering;

use super::{PackageError, PackageSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Segment<'a> {
    Numeric(&'a str),
    Alpha(&'a str),
}

/// Splits a version string into maximal runs of ASCII digits or ASCII letters.
/// Everything else separates segments and carries no weight.
fn segments(s: &str) -> impl Iterator<Item = Segment<'_>> {
    let bytes = s.as_bytes();
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < bytes.len() && !bytes[i].is_ascii_alphanumeric() {
            i += 1;
        }
        if i >= bytes.len() {
            return None;
        }
        let start = i;
        let numeric = bytes[i].is_ascii_digit();
        while i < bytes.len()
            && (if numeric { bytes[i].is_ascii_digit() } else { bytes[i].is_ascii_alphabetic() })
        {
            i += 1;
        }
        let run = &s[start..i];
        Some(if numeric { Segment::Numeric(run) } else { Segment::Alpha(run) })
    })
}

fn compare_numeric(a: &str, b: &str) -> Ordering {
    // no parsing, so arbitrarily long digit runs cannot overflow
    let a = a.trim_start_matches('0');
    let b = b.trim_start_matches('0');
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

/// Segment-wise comparison of two version (or release) strings.
///
/// Numeric segments compare as numbers, alphabetic ones bytewise, a numeric
/// segment beats an alphabetic one, and when one string is a segment-prefix
/// of the other the longer one is greater.
pub fn compare_segments(a: &str, b: &str) -> Ordering {
    let mut left = segments(a);
    let mut right = segments(b);
    loop {
        match (left.next(), right.next()) {
            (None, None) => return Ordering::Equal,
            (Some(_), None) => return Ordering::Greater,
            (None, Some(_)) => return Ordering::Less,
            (Some(x), Some(y)) => {
                let ord = match (x, y) {
                    (Segment::Numeric(x), Segment::Numeric(y)) => compare_numeric(x, y),
                    (Segment::Alpha(x), Segment::Alpha(y)) => x.cmp(y),
                    (Segment::Numeric(_), Segment::Alpha(_)) => Ordering::Greater,
                    (Segment::Alpha(_), Segment::Numeric(_)) => Ordering::Less,
                };
                if ord != Ordering::Equal {
                    return ord;
                }
            }
        }
    }
}

/// Orders two builds of the same package: version first, then release.
pub fn compare_versions(a: &PackageSpec, b: &PackageSpec) -> Result<Ordering, PackageError> {
    if a.key() != b.key() {
        return Err(PackageError::IdentityMismatch {
            left: a.key().to_string(),
            right: b.key().to_string(),
        });
    }
    Ok(compare_segments(&a.version, &b.version).then_with(|| compare_segments(&a.release, &b.release)))
}

/// Total order used for planning. Builds that compare equal by segments but
/// are spelled differently (`1.01` vs `1.1`) are ordered by their raw bytes so
/// the plan can still converge on the exact configured spelling.
pub(crate) fn plan_order(a: &PackageSpec, b: &PackageSpec) -> Ordering {
    compare_segments(&a.version, &b.version)
        .then_with(|| compare_segments(&a.release, &b.release))
        .then_with(|| a.version.cmp(&b.version))
        .then_with(|| a.release.cmp(&b.release))
}
