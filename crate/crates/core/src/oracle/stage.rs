//! Integer-only references for the per-element quantized operators.

/// floor((m' * s + 2^{shift-1}) / 2^shift): fixed-point multiply with ties
/// rounded up.
pub fn rescale(s: i64, m_prime: u32, shift: u32) -> i64 {
    let prod = m_prime as i128 * s as i128;
    let half = 1i128 << (shift - 1);
    (prod + half).div_euclid(1i128 << shift) as i64
}

/// z_3 + rescale(s), before clamping.
pub fn output_stage_preclamp(s: i64, m_prime: u32, shift: u32, z3: u8) -> i64 {
    z3 as i64 + rescale(s, m_prime, shift)
}

pub fn output_stage(s: i64, m_prime: u32, shift: u32, z3: u8, lo: u8, hi: u8) -> u8 {
    output_stage_preclamp(s, m_prime, shift, z3).clamp(lo as i64, hi as i64) as u8
}

/// Σ (a_i − z_1)(b_i − z_2) + bias.
pub fn conv_dot(a: &[u8], b: &[u8], z1: u8, z2: u8, bias: i32) -> i64 {
    a.iter()
        .zip(b)
        .map(|(&x, &w)| (x as i64 - z1 as i64) * (w as i64 - z2 as i64))
        .sum::<i64>()
        + bias as i64
}

/// 31-bit fixed-point reciprocal of a public divisor.
pub fn reciprocal(divisor: u32) -> u64 {
    (((1u64 << 32) / divisor as u64) + 1) >> 1
}

/// Rounded mean of a window via the public reciprocal.
pub fn avg_pool(window: &[u8], divisor: u32) -> u8 {
    let sum: u64 = window.iter().map(|&v| v as u64).sum();
    let v = (sum as u128 * reciprocal(divisor) as u128 + (1 << 30)) >> 31;
    u8::try_from(v).expect("mean of bytes fits a byte")
}

pub fn max_pool(window: &[u8]) -> u8 {
    *window.iter().max().expect("non-empty window")
}

/// Index of the maximum; the first occurrence wins ties.
pub fn argmax<T: Ord + Copy>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_rounds_half_up() {
        // m' / 2^shift = 1/4
        assert_eq!(rescale(6, 1 << 30, 32), 2);
        assert_eq!(rescale(5, 1 << 30, 32), 1);
        assert_eq!(rescale(-6, 1 << 30, 32), -1);
        assert_eq!(rescale(-7, 1 << 30, 32), -2);
    }

    #[test]
    fn reciprocal_is_rounded() {
        assert_eq!(reciprocal(1), 1 << 31);
        assert_eq!(reciprocal(4), 1 << 29);
        assert_eq!(reciprocal(3), 715_827_883);
    }

    #[test]
    fn avg_ties_up() {
        assert_eq!(avg_pool(&[4, 6, 7, 9], 4), 7);
        assert_eq!(avg_pool(&[255; 9], 9), 255);
        assert_eq!(avg_pool(&[1, 2, 2], 3), 2);
    }

    #[test]
    fn argmax_first_occurrence() {
        assert_eq!(argmax(&[3, 7, 7, 1]), 1);
        assert_eq!(argmax(&[5]), 0);
    }
}
