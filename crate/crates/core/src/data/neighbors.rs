use super::{distance, Point, Scene};

/// Up to `n` agents other than `agent`, nearest first by Euclidean
/// distance, ties broken by lower agent id. Returns indices into
/// `positions`.
pub fn nearest_neighbors(positions: &[Point], agent_ids: &[u64], agent: usize, n: usize) -> Vec<usize> {
    let me = positions[agent];
    let mut others: Vec<(f64, u64, usize)> = positions
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != agent)
        .map(|(j, &p)| (distance(me, p), agent_ids[j], j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(n).map(|(_, _, j)| j).collect()
}

/// [`nearest_neighbors`] at frame `t` of a scene.
pub fn nearest_neighbors_at(scene: &Scene, agent: usize, t: usize, n: usize) -> Vec<usize> {
    let positions: Vec<Point> = scene.tracks.iter().map(|tr| tr.positions[t]).collect();
    let ids: Vec<u64> = scene.tracks.iter().map(|tr| tr.agent_id).collect();
    nearest_neighbors(&positions, &ids, agent, n)
}
