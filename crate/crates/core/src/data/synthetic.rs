//! Synthetic multi-channel traffic with daily and weekly structure.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::format::TrafficTensorFile;
use crate::error::{Error, Result};
use crate::init::substream;
use crate::tensor::Tensor;

const SLOTS_PER_DAY: usize = 288;
/// Persistence of the slow per-node disturbance.
const AR_COEF: f64 = 0.95;
/// Share of a neighbour's innovation mixed into each node's.
const COUPLING: f64 = 0.5;
const WEEKEND_DAMPING: f64 = 0.6;

/// Relative demand at hour `h` (0–24): morning and evening peaks over a
/// night-time floor.
fn daily_profile(h: f64, am: f64, pm: f64) -> f64 {
    let bump = |c: f64, w: f64| (-(h - c).powi(2) / (2.0 * w * w)).exp();
    0.12 + 0.35 * bump(13.0, 4.0) + 0.75 * bump(am, 1.2) + 0.85 * bump(pm, 1.5)
}

/// Deterministic five-minute series for `(n_nodes, days, seed)`, starting
/// Monday at midnight.
///
/// Flow follows a two-peak daily profile scaled per node, damped on
/// weekends and perturbed by AR(1) noise whose innovations are shared with
/// the neighbouring sensor indices. Occupancy is a logistic function of the
/// flow/capacity ratio and speed drops quadratically with occupancy.
pub fn synthetic_generate(n_nodes: usize, days: usize, seed: u64) -> Result<TrafficTensorFile> {
    if n_nodes == 0 || days == 0 {
        return Err(Error::Config(format!(
            "synthetic data needs at least one node and one day (got {n_nodes}, {days})"
        )));
    }
    let mut rng = substream(seed, "synthetic");
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    struct Node {
        base: f64,
        capacity: f64,
        free_speed: f64,
        am: f64,
        pm: f64,
    }
    let nodes: Vec<Node> = (0..n_nodes)
        .map(|v| {
            let base = rng.gen_range(180.0..420.0);
            // peaks drift along the sensor order, like a corridor
            let shift = 0.6 * (v as f64 / n_nodes.max(2) as f64 - 0.5);
            Node {
                base,
                capacity: base * rng.gen_range(1.15..1.45),
                free_speed: rng.gen_range(60.0..72.0),
                am: 8.0 + shift + rng.gen_range(-0.25..0.25),
                pm: 17.5 - shift + rng.gen_range(-0.25..0.25),
            }
        })
        .collect();

    let t_total = days * SLOTS_PER_DAY;
    let mut raw = vec![0.0; t_total * n_nodes * 3];
    let mut ar = vec![0.0; n_nodes];
    let mut z = vec![0.0; n_nodes];
    let ar_innov = 0.06 * (1.0 - AR_COEF * AR_COEF).sqrt();
    for k in 0..t_total {
        let slot = k % SLOTS_PER_DAY;
        let weekend = (k / SLOTS_PER_DAY) % 7 >= 5;
        let h = slot as f64 * 24.0 / SLOTS_PER_DAY as f64;
        for zv in z.iter_mut() {
            *zv = std_normal.sample(&mut rng);
        }
        let norm = 1.0 / (1.0 + 2.0 * COUPLING * COUPLING).sqrt();
        for (v, node) in nodes.iter().enumerate() {
            let left = if v > 0 { z[v - 1] } else { 0.0 };
            let right = if v + 1 < n_nodes { z[v + 1] } else { 0.0 };
            let innov = (z[v] + COUPLING * (left + right)) * norm;
            ar[v] = AR_COEF * ar[v] + ar_innov * innov;

            let mut profile = daily_profile(h, node.am, node.pm);
            if weekend {
                profile = 0.12 + WEEKEND_DAMPING * (profile - 0.12) * 0.8;
            }
            let measurement = 0.03 * std_normal.sample(&mut rng);
            let flow = (node.base * profile * (1.0 + ar[v] + measurement)).max(0.0);
            let ratio = flow / node.capacity;
            let occ = (1.0 / (1.0 + (-6.0 * (ratio - 0.75)).exp()) + 0.01 * std_normal.sample(&mut rng)).clamp(0.0, 1.0);
            let speed = (node.free_speed * (1.0 - 0.75 * occ * occ) + 1.0 * std_normal.sample(&mut rng)).max(0.0);
            let at = (k * n_nodes + v) * 3;
            raw[at] = flow;
            raw[at + 1] = speed;
            raw[at + 2] = occ;
        }
    }
    let file = TrafficTensorFile {
        raw: Tensor::new([t_total, n_nodes, 3], raw)?,
        interval_minutes: 5,
        start_slot: 0,
        start_dow: 0,
        sensor_ids: (0..n_nodes).map(|v| format!("syn-{v:04}")).collect(),
    };
    file.validate()?;
    Ok(file)
}
