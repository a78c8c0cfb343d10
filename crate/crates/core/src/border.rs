//! Border index mapping shared by the filters.

/// Mirrors an out-of-range index without repeating the edge sample
/// (`dcb|abcd|cba`). Any `i` is accepted; `n` must be non-zero.
#[inline]
pub fn reflect101(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}
