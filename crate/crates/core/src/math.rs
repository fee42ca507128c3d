//! Small numeric helpers shared across modules.

/// Relative tolerance used when deciding ties between scores.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Shannon entropy in bits. Zero entries contribute nothing; the input is
/// normalised first, so unnormalised masses are accepted.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            let q = x / total;
            h -= q * q.log2();
        }
    }
    h.max(0.0)
}

/// `-Σ m log2(m / total)` for unnormalised masses, i.e. `total · H(m / total)`.
#[inline]
pub(crate) fn mass_entropy(masses: &[f64]) -> (f64, f64) {
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        return (0.0, 0.0);
    }
    let lt = total.log2();
    let mut acc = 0.0;
    for &m in masses {
        if m > 0.0 {
            acc -= m * (m.log2() - lt);
        }
    }
    (total, acc)
}

/// Indices whose value is within tolerance of the maximum.
pub fn argmax_set(values: &[f64]) -> Vec<usize> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // all -inf (or NaN): treat every finite-or-not entry equally
        return (0..values.len()).collect();
    }
    let tol = TIE_TOLERANCE * max.abs().max(1.0);
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= max - tol)
        .map(|(i, _)| i)
        .collect()
}

/// `softmax(beta · values)`. `beta = +∞` puts uniform mass on the maxima.
pub fn softmax(values: &[f64], beta: f64) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    if beta == f64::INFINITY {
        let best = argmax_set(values);
        let mut out = vec![0.0; n];
        for &i in &best {
            out[i] = 1.0 / best.len() as f64;
        }
        return out;
    }
    if beta == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    let scaled: Vec<f64> = values.iter().map(|v| beta * v).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / n as f64; n];
    }
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Poisson probabilities for `k = 0..=cap`, renormalised over that range.
pub fn truncated_poisson(lambda: f64, cap: usize) -> Vec<f64> {
    let mut w = vec![0.0; cap + 1];
    if lambda <= 0.0 {
        w[0] = 1.0;
        return w;
    }
    let ll = lambda.ln();
    let mut log_fact = 0.0;
    for (k, slot) in w.iter_mut().enumerate() {
        if k > 0 {
            log_fact += (k as f64).ln();
        }
        *slot = (k as f64 * ll - lambda - log_fact).exp();
    }
    let z: f64 = w.iter().sum();
    if z > 0.0 && z.is_finite() {
        for x in &mut w {
            *x /= z;
        }
    } else {
        // λ so large that every k ≤ cap underflows: all mass at the cap
        w.iter_mut().for_each(|x| *x = 0.0);
        w[cap] = 1.0;
    }
    w
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; `None` with fewer than two values.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    Some(v.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Mixes a master seed with a text tag (FNV-1a, then a splitmix64 finaliser)
/// so that derived streams are stable across platforms and releases.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(master ^ h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_values() {
        assert_eq!(shannon_entropy(&[1.0, 0.0]), 0.0);
        assert!((shannon_entropy(&[0.5, 0.5]) - 1.0).abs() < 1e-15);
        assert!((shannon_entropy(&[1.0; 25]) - 25f64.log2()).abs() < 1e-12);
        let (t, h) = mass_entropy(&[2.0, 2.0]);
        assert_eq!(t, 4.0);
        assert!((h - 4.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_limits() {
        assert_eq!(softmax(&[1.0, 2.0, 2.0], f64::INFINITY), vec![0.0, 0.5, 0.5]);
        assert_eq!(softmax(&[1.0, 5.0], 0.0), vec![0.5, 0.5]);
        let s = softmax(&[0.0, 1.0f64.ln()], 1.0);
        assert!((s[0] - 0.5).abs() < 1e-12);
        let s = softmax(&[1000.0, 0.0], 1.0);
        assert!(s[0] > 0.999 && s.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn poisson_weights() {
        let w = truncated_poisson(1.5, 50);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[0] - (-1.5f64).exp()).abs() < 1e-12);
        assert_eq!(truncated_poisson(0.0, 50)[0], 1.0);
        let big = truncated_poisson(1e6, 50);
        assert_eq!(big[50], 1.0);
    }

    #[test]
    fn summary_stats() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(sample_sd(&[1.0]), None);
        assert!((sample_sd(&[1.0, 3.0]).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((sigmoid(logit(0.3)) - 0.3).abs() < 1e-12);
    }
}
