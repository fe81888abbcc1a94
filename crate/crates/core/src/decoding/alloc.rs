/// Split `beam` slots across banks given how many candidates each bank holds.
///
/// Banks `0..=b` are reachable, where `b` is the highest bank with a
/// candidate. The beam is divided evenly across them and the remainder goes
/// to the highest banks. Each empty reachable bank then hands its slots to
/// the nearest nonempty bank below it, or above it when there is none below.
/// The result has one entry per bank and always sums to `beam`.
pub fn allocate_banks(beam: usize, counts: &[usize]) -> Vec<usize> {
    let mut alloc = vec![0; counts.len().max(1)];
    let Some(top) = counts.iter().rposition(|&c| c > 0) else {
        alloc[0] = beam;
        return alloc;
    };
    let n = top + 1;
    let base = beam / n;
    let rem = beam % n;
    for (b, slot) in alloc.iter_mut().enumerate().take(n) {
        *slot = base + usize::from(b >= n - rem);
    }
    for b in 0..n {
        if counts[b] > 0 || alloc[b] == 0 {
            continue;
        }
        let target = (0..b).rev().find(|&j| counts[j] > 0).or_else(|| (b + 1..n).find(|&j| counts[j] > 0));
        let target = target.expect("bank `top` is nonempty");
        alloc[target] += alloc[b];
        alloc[b] = 0;
    }
    alloc
}
