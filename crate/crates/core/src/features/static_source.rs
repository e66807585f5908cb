use rand::Rng;

/// Draws `V*` uniformly from the frames other than `query`.
pub fn draw_source_frame(k: usize, query: usize, rng: &mut impl Rng) -> usize {
    assert!(k >= 2 && query < k, "need another frame to sample from");
    let r = rng.gen_range(0..k - 1);
    if r >= query {
        r + 1
    } else {
        r
    }
}

/// Draws `V*` and redraws once if `usable` rejects it; `None` if both fail.
pub fn choose_source_frame(k: usize, query: usize, rng: &mut impl Rng, usable: impl Fn(usize) -> bool) -> Option<usize> {
    let first = draw_source_frame(k, query, rng);
    if usable(first) {
        return Some(first);
    }
    let second = draw_source_frame(k, query, rng);
    usable(second).then_some(second)
}
