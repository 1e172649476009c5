//! Payload size lists for the command line.
//!
//! - `4K`, `10M`, `512`: one size. `K` is 1024 bytes, `M` is 1024 K.
//! - `1K,4K,...,4096K`: after `...` the ratio of the two previous sizes
//!   repeats until the next listed size.
//! - `100K..10M`: doubles from the first size, then ends on the second.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad size list {input:?}: {reason}")]
pub struct SizeError {
    pub input: String,
    pub reason: String,
}

pub fn parse_size(text: &str) -> Option<usize> {
    let text = text.trim();
    let (digits, mult) = match text.char_indices().last()? {
        (i, 'K' | 'k') => (&text[..i], 1024),
        (i, 'M' | 'm') => (&text[..i], 1024 * 1024),
        (i, 'B' | 'b') => (&text[..i], 1),
        _ => (text, 1),
    };
    digits.trim().parse::<usize>().ok()?.checked_mul(mult)
}

pub fn parse_sizes(input: &str) -> Result<Vec<usize>, SizeError> {
    let fail = |reason: &str| SizeError {
        input: input.to_string(),
        reason: reason.to_string(),
    };
    let parse = |s: &str| parse_size(s).ok_or_else(|| fail(&format!("cannot read {s:?}")));

    let mut out: Vec<usize> = Vec::new();
    let items: Vec<&str> = input.split(',').map(str::trim).collect();
    let mut i = 0;
    while i < items.len() {
        let item = items[i];
        if item == "..." {
            let (Some(&b), Some(&a)) = (out.last(), out.iter().rev().nth(1)) else {
                return Err(fail("\"...\" needs two sizes before it"));
            };
            let end = parse(items.get(i + 1).ok_or_else(|| fail("\"...\" needs a size after it"))?)?;
            if a == 0 || b <= a || b % a != 0 {
                return Err(fail("\"...\" needs an increasing whole-number ratio"));
            }
            let ratio = b / a;
            let mut next = b * ratio;
            while next < end {
                out.push(next);
                next *= ratio;
            }
            out.push(end);
            i += 2;
            continue;
        }
        if let Some((lo, hi)) = item.split_once("..") {
            let (lo, hi) = (parse(lo)?, parse(hi)?);
            if lo == 0 || hi < lo {
                return Err(fail("range must go from a positive size upwards"));
            }
            let mut s = lo;
            while s < hi {
                out.push(s);
                s *= 2;
            }
            out.push(hi);
        } else {
            out.push(parse(item)?);
        }
        i += 1;
    }
    if out.is_empty() {
        return Err(fail("no sizes"));
    }
    if out.contains(&0) {
        return Err(fail("sizes must be at least 1 byte"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sizes() {
        assert_eq!(parse_size("512"), Some(512));
        assert_eq!(parse_size("4K"), Some(4096));
        assert_eq!(parse_size("10M"), Some(10 << 20));
        assert_eq!(parse_size("x"), None);
    }

    #[test]
    fn ellipsis_repeats_ratio() {
        let got = parse_sizes("1K,4K,...,4096K").unwrap();
        let want: Vec<usize> = [1, 4, 16, 64, 256, 1024, 4096].iter().map(|k| k * 1024).collect();
        assert_eq!(got, want);
        assert!(parse_sizes("1K,...,4K").is_err());
    }

    #[test]
    fn range_doubles() {
        let got = parse_sizes("100K..1M").unwrap();
        assert_eq!(got, [100 << 10, 200 << 10, 400 << 10, 800 << 10, 1 << 20]);
        assert!(parse_sizes("0..1K").is_err());
        assert!(parse_sizes("").is_err());
        assert!(parse_sizes("0").is_err());
    }
}
