//! RRT* in 3D position space with rewiring and monotone best-cost
//! bookkeeping.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Scene;
use crate::model::LtiModel;

use super::{planning_margin, point_clear, segment_clear, PlannerConfig, PlannerError};

struct Node {
    pos: DVector<f64>,
    parent: Option<usize>,
    cost: f64,
}

/// Axis-aligned sampling bounds: obstacles, start, and goal padded by
/// 0.5 m, clipped to the position box.
fn sampling_bounds(
    scene: &Scene,
    start: &DVector<f64>,
    goal: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let dim = start.len();
    let mut lo = DVector::from_element(dim, f64::INFINITY);
    let mut hi = DVector::from_element(dim, f64::NEG_INFINITY);
    let mut absorb = |p: &DVector<f64>, pad: f64| {
        for i in 0..dim {
            lo[i] = lo[i].min(p[i] - pad);
            hi[i] = hi[i].max(p[i] + pad);
        }
    };
    absorb(start, 0.5);
    absorb(goal, 0.5);
    for obs in &scene.obstacles {
        absorb(&obs.center(), obs.radius_m + 0.5);
    }
    for i in 0..dim {
        lo[i] = lo[i].max(scene.x_min[i]);
        hi[i] = hi[i].min(scene.x_max[i]);
    }
    (lo, hi)
}

/// Returns the raw waypoint sequence from start to goal; deterministic for a
/// fixed seed, and the returned path length is non-increasing in
/// `max_iters` (each iteration draws the same random numbers regardless of
/// outcome, and rewiring only ever lowers node costs).
pub fn plan_rrt_star(
    scene: &Scene,
    model: &LtiModel,
    start: &DVector<f64>,
    goal: &DVector<f64>,
    cfg: &PlannerConfig,
) -> Result<Vec<DVector<f64>>, PlannerError> {
    let margin = planning_margin(scene);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = sampling_bounds(scene, start, goal);
    let dim = start.len();
    let step = cfg.rrt.step_size_m;

    let mut nodes = vec![Node {
        pos: start.clone(),
        parent: None,
        cost: 0.0,
    }];
    // goal joins the tree lazily; index of its node once connected
    let mut goal_node: Option<usize> = None;

    for _ in 0..cfg.rrt.max_iters {
        // fixed per-iteration random consumption keeps sample sequences
        // aligned across different max_iters budgets
        let bias: f64 = rng.gen();
        let coords: Vec<f64> = (0..dim).map(|i| rng.gen_range(lo[i]..=hi[i])).collect();
        let target = if bias < cfg.rrt.goal_bias {
            goal.clone()
        } else {
            DVector::from_vec(coords)
        };

        // nearest node
        let (nearest, ndist) = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, (&n.pos - &target).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if ndist < 1e-12 {
            continue;
        }
        let new_pos = if ndist <= step {
            target
        } else {
            &nodes[nearest].pos + (&target - &nodes[nearest].pos) * (step / ndist)
        };
        if !point_clear(scene, model, &new_pos, margin)
            || !segment_clear(scene, model, &nodes[nearest].pos, &new_pos, margin)
        {
            continue;
        }

        // choose parent among neighbors within the rewire radius
        let neighbors: Vec<usize> = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| (&n.pos - &new_pos).norm() <= cfg.rrt.rewire_radius_m)
            .map(|(i, _)| i)
            .collect();
        let mut best_parent = nearest;
        let mut best_cost = nodes[nearest].cost + (&nodes[nearest].pos - &new_pos).norm();
        for &j in &neighbors {
            let c = nodes[j].cost + (&nodes[j].pos - &new_pos).norm();
            if c < best_cost && segment_clear(scene, model, &nodes[j].pos, &new_pos, margin) {
                best_parent = j;
                best_cost = c;
            }
        }
        let new_idx = nodes.len();
        nodes.push(Node {
            pos: new_pos.clone(),
            parent: Some(best_parent),
            cost: best_cost,
        });

        // rewire neighbors through the new node
        for &j in &neighbors {
            let c = best_cost + (&nodes[j].pos - &new_pos).norm();
            if c + 1e-12 < nodes[j].cost
                && segment_clear(scene, model, &new_pos, &nodes[j].pos, margin)
            {
                nodes[j].parent = Some(new_idx);
                let dc = nodes[j].cost - c;
                nodes[j].cost = c;
                propagate_cost_reduction(&mut nodes, j, dc);
            }
        }

        // try to connect the goal
        let gd = (&new_pos - goal).norm();
        if gd <= step && segment_clear(scene, model, &new_pos, goal, margin) {
            let gcost = best_cost + gd;
            match goal_node {
                None => {
                    goal_node = Some(nodes.len());
                    nodes.push(Node {
                        pos: goal.clone(),
                        parent: Some(new_idx),
                        cost: gcost,
                    });
                }
                Some(g) => {
                    if gcost < nodes[g].cost {
                        nodes[g].parent = Some(new_idx);
                        nodes[g].cost = gcost;
                    }
                }
            }
        }
    }

    let g = goal_node.ok_or(PlannerError::NoPathFound)?;
    let mut rev = vec![];
    let mut cur = Some(g);
    while let Some(i) = cur {
        rev.push(nodes[i].pos.clone());
        cur = nodes[i].parent;
    }
    rev.reverse();
    Ok(rev)
}

/// Pushes a cost reduction at `root` down to its descendants (the goal node
/// included), keeping stored costs consistent after rewiring.
fn propagate_cost_reduction(nodes: &mut [Node], root: usize, dc: f64) {
    let mut stack = vec![root];
    while let Some(p) = stack.pop() {
        for i in 0..nodes.len() {
            if nodes[i].parent == Some(p) {
                nodes[i].cost -= dc;
                stack.push(i);
            }
        }
    }
}
