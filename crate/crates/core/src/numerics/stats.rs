use crate::error::{Error, Result};

/// Lower median: the order statistic at index `(n-1)/2`.
pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Domain("median of empty input".into()));
    }
    let mut v = xs.to_vec();
    Ok(lower_median(&mut v))
}

/// In-place lower median of a nonempty buffer (reorders it).
pub fn lower_median(v: &mut [f64]) -> f64 {
    let k = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.0);
        assert_eq!(median(&[7.0]).unwrap(), 7.0);
        assert!(median(&[]).is_err());
    }
}
