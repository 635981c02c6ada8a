use rand::Rng;

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Depth-wise epsilon/eta action selection.
///
/// With probability `1 - eps` the greedy action. Otherwise a random action:
/// with probability `eta` drawn from the actions of cells not yet touched
/// this episode (all actions if every cell is touched), else from all actions.
pub fn select_action<R: Rng + ?Sized>(
    q_values: &[f64],
    history: &[bool],
    n_tilts: usize,
    eps: f64,
    eta: f64,
    rng: &mut R,
) -> usize {
    if rng.random::<f64>() >= eps {
        return argmax(q_values);
    }
    let n = q_values.len();
    if rng.random::<f64>() < eta {
        let free: Vec<usize> = history
            .chunks(n_tilts)
            .enumerate()
            .filter(|(_, bits)| !bits.iter().any(|&b| b))
            .flat_map(|(cell, _)| cell * n_tilts..(cell + 1) * n_tilts)
            .collect();
        if !free.is_empty() {
            return free[rng.random_range(0..free.len())];
        }
    }
    rng.random_range(0..n)
}
