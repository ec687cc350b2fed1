//! Bessel functions of the first kind for integer order.
//!
//! Small arguments use the ascending power series directly. Larger
//! arguments, or large orders, use Miller's downward recurrence normalized
//! by the Neumann sum `J_0 + 2 Σ J_{2k} = 1`.

/// Power series is used below this argument (and for |n| ≤ [`SERIES_MAX_ORDER`]).
/// The largest series term is bounded by I_n(x), so the cancellation error
/// stays below ~1e-13 here.
const SERIES_MAX_ARG: f64 = 8.0;
const SERIES_MAX_ORDER: u32 = 40;

const RESCALE_THRESHOLD: f64 = 1e250;

/// `J_n(x)` for integer `n` and real `x`.
pub fn bessel_j(n: i32, x: f64) -> f64 {
    // J_{-n}(x) = (-1)^n J_n(x) and J_n(-x) = (-1)^n J_n(x)
    let sign = if (n < 0) ^ (x < 0.0) && n % 2 != 0 {
        -1.0
    } else {
        1.0
    };
    let order = n.unsigned_abs();
    let x = x.abs();
    sign * bessel_j_nonneg(order, x)
}

/// `[J_0(x), J_1(x), ..., J_{max_order}(x)]` in one downward sweep.
pub fn bessel_j_sequence(max_order: u32, x: f64) -> Vec<f64> {
    let x = x.abs();
    let len = max_order as usize + 1;
    if x == 0.0 {
        let mut out = vec![0.0; len];
        out[0] = 1.0;
        return out;
    }
    if x < SERIES_MAX_ARG && max_order <= SERIES_MAX_ORDER {
        return (0..=max_order).map(|n| power_series(n, x)).collect();
    }
    miller(max_order, x)
}

fn bessel_j_nonneg(order: u32, x: f64) -> f64 {
    if x == 0.0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    if x < SERIES_MAX_ARG && order <= SERIES_MAX_ORDER {
        power_series(order, x)
    } else {
        miller(order, x)[order as usize]
    }
}

/// Ascending series `Σ_k (-1)^k (x/2)^{2k+n} / (k! (k+n)!)`.
pub(crate) fn power_series(order: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let quarter_sq = half * half;
    // (x/2)^n / n!, built multiplicatively to avoid overflow
    let mut term = 1.0;
    for k in 1..=order {
        term *= half / k as f64;
        if term == 0.0 {
            return 0.0;
        }
    }
    let mut sum = term;
    let n = order as f64;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= -quarter_sq / (k * (k + n));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs().max(f64::MIN_POSITIVE) && k > half {
            break;
        }
        if k > 500.0 {
            break;
        }
    }
    sum
}

/// Miller's algorithm: downward recurrence from a large even starting order,
/// normalized with `J_0 + 2 Σ_{k≥1} J_{2k} = 1`.
fn miller(max_order: u32, x: f64) -> Vec<f64> {
    let top = (max_order as f64).max(x);
    let mut start = (top + 20.0 + 6.0 * top.sqrt()).ceil() as usize;
    if start % 2 == 1 {
        start += 1;
    }
    let len = max_order as usize + 1;
    let mut values = vec![0.0; len];

    let mut above = 0.0; // j_{k+1}
    let mut current = 1e-30; // j_k
    let mut norm = 0.0;
    let two_over_x = 2.0 / x;
    for k in (1..=start).rev() {
        if k < len {
            values[k] = current;
        }
        if k % 2 == 0 {
            norm += 2.0 * current;
        }
        let below = k as f64 * two_over_x * current - above;
        above = current;
        current = below;
        if current.abs() > RESCALE_THRESHOLD {
            let scale = 1.0 / RESCALE_THRESHOLD;
            current *= scale;
            above *= scale;
            norm *= scale;
            for v in values.iter_mut() {
                *v *= scale;
            }
        }
    }
    values[0] = current;
    norm += current;
    for v in values.iter_mut() {
        *v /= norm;
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_values() {
        assert_eq!(bessel_j(0, 0.0), 1.0);
        assert_eq!(bessel_j(3, 0.0), 0.0);
        assert_eq!(bessel_j(-3, 0.0), 0.0);
    }

    #[test]
    fn j0_at_one_matches_series_oracle() {
        // frozen from the power series summed to 1e-15
        assert!((bessel_j(0, 1.0) - 0.765_197_686_557_966_6).abs() < 1e-12);
    }

    #[test]
    fn known_values() {
        // A&S table values
        let cases = [
            (0, 2.0, 0.223_890_779_141_235_67),
            (1, 2.0, 0.576_724_807_756_873_4),
            (0, 10.0, -0.245_935_764_451_348_3),
            (1, 10.0, 0.043_472_746_168_861_44),
            (5, 10.0, -0.234_061_528_186_793_6),
            (10, 10.0, 0.207_486_106_633_358_86),
            (0, 20.0, 0.167_024_664_340_583_1),
        ];
        for (n, x, expected) in cases {
            let got = bessel_j(n, x);
            assert!(
                (got - expected).abs() < 1e-12,
                "J_{n}({x}) = {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn reflection_in_order() {
        for n in 0..12 {
            for &x in &[0.3, 2.5, 9.0, 14.0] {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                assert!((bessel_j(-n, x) - sign * bessel_j(n, x)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn series_and_miller_agree_in_overlap() {
        for n in 0..=30u32 {
            for i in 1..=70 {
                let x = 0.1 * i as f64;
                let series = power_series(n, x);
                let downward = miller(n, x)[n as usize];
                assert!(
                    (series - downward).abs() < 1e-13,
                    "n={n} x={x}: {series} vs {downward}"
                );
            }
        }
    }

    #[test]
    fn recurrence_holds() {
        for n in -30..=30 {
            for i in 0..=199 {
                let x = 0.1 + i as f64 * (19.9 / 199.0);
                let lhs = bessel_j(n - 1, x) + bessel_j(n + 1, x);
                let rhs = 2.0 * n as f64 / x * bessel_j(n, x);
                assert!((lhs - rhs).abs() < 1e-10, "n={n} x={x}");
            }
        }
    }

    #[test]
    fn sequence_matches_pointwise() {
        for &x in &[0.5, 4.0, 7.9, 8.0, 12.0, 25.0] {
            let seq = bessel_j_sequence(45, x);
            for (n, v) in seq.iter().enumerate() {
                assert!((v - bessel_j(n as i32, x)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn far_tail_is_negligible() {
        // beyond |n| = 10 + 2x the value is below 1e-11
        for &x in &[0.5, 2.0, 6.0, 12.0] {
            let n = (10.0_f64 + 2.0 * x).ceil() as i32 + 1;
            assert!(bessel_j(n, x).abs() < 1e-11);
        }
    }
}
