//! Simulated node temperatures and threshold-based failure prediction.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::time::SimTime;
use crate::topology::Coord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub node: Coord,
    pub temperature: f64,
    pub timestamp: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorParams {
    pub baseline: f64,
    pub noise_sigma: f64,
    pub tick_ms: f64,
    pub ramp_rate: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            baseline: 40.0,
            noise_sigma: 1.5,
            tick_ms: 10.0,
            ramp_rate: 0.5,
        }
    }
}

/// A linear heat ramp bound to one physical node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeRamp {
    pub node: Coord,
    pub start: SimTime,
    /// Degrees per simulated millisecond.
    pub rate: f64,
}

/// Noise is cut off at this many standard deviations.
pub const NOISE_CLIP_SIGMAS: f64 = 4.0;

/// Baseline plus clipped Gaussian noise, plus every ramp on `node` that has
/// started by `time`.
pub fn sample_temperature<R: Rng + ?Sized>(
    node: Coord,
    time: SimTime,
    ramps: &[NodeRamp],
    params: &SensorParams,
    rng: &mut R,
) -> SensorReading {
    let noise = if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma).expect("sigma is positive and finite");
        // Rejection keeps the shape of the bell inside the clip window.
        loop {
            let z: f64 = normal.sample(rng);
            if z.abs() <= NOISE_CLIP_SIGMAS * params.noise_sigma {
                break z;
            }
        }
    } else {
        0.0
    };
    let heat: f64 = ramps
        .iter()
        .filter(|r| r.node == node && time >= r.start)
        .map(|r| r.rate * (time - r.start).as_ms())
        .sum();
    SensorReading {
        node,
        temperature: params.baseline + noise + heat,
        timestamp: time,
    }
}

/// Strictly above the threshold predicts a failure.
pub fn predict_failure(reading: &SensorReading, threshold: f64) -> bool {
    reading.temperature > threshold
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const NODE: Coord = Coord::new(1, 1);

    fn at(node: Coord, temperature: f64) -> SensorReading {
        SensorReading {
            node,
            temperature,
            timestamp: SimTime::ZERO,
        }
    }

    #[test]
    fn strict_threshold() {
        assert!(!predict_failure(&at(NODE, 70.0), 70.0));
        assert!(predict_failure(&at(NODE, 70.1), 70.0));
    }

    #[test]
    fn unscheduled_node_stays_within_four_sigma() {
        let params = SensorParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let n = 100_000;
        for i in 0..n {
            let r = sample_temperature(NODE, SimTime::from_ms(i as f64), &[], &params, &mut rng);
            lo = lo.min(r.temperature);
            hi = hi.max(r.temperature);
            sum += r.temperature;
        }
        let band = 4.0 * params.noise_sigma;
        assert!(
            lo >= params.baseline - band && hi <= params.baseline + band,
            "{lo}..{hi}"
        );
        // mean within 5 standard errors
        assert!((sum / n as f64 - params.baseline).abs() < 5.0 * params.noise_sigma / (n as f64).sqrt());
    }

    #[test]
    fn ramp_dominates_noise_eventually() {
        let params = SensorParams::default();
        let ramp = NodeRamp {
            node: NODE,
            start: SimTime::from_ms(100.0),
            rate: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in [200.0, 500.0, 5000.0] {
            let r = sample_temperature(NODE, SimTime::from_ms(t), &[ramp], &params, &mut rng);
            assert!(r.temperature > 70.0, "t={t}: {}", r.temperature);
        }
        // a ramp on another node does nothing here
        let other = sample_temperature(Coord::new(0, 0), SimTime::from_ms(5000.0), &[ramp], &params, &mut rng);
        assert!(other.temperature < 50.0);
    }

    #[test]
    fn before_ramp_start_looks_like_baseline() {
        let params = SensorParams::default();
        let ramp = NodeRamp {
            node: NODE,
            start: SimTime::from_ms(1e9),
            rate: 0.5,
        };
        let mut rng_a = ChaCha8Rng::seed_from_u64(11);
        let mut rng_b = ChaCha8Rng::seed_from_u64(12);
        let n = 20_000;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for i in 0..n {
            let t = SimTime::from_ms(i as f64);
            a.push(sample_temperature(NODE, t, &[ramp], &params, &mut rng_a).temperature);
            b.push(sample_temperature(Coord::new(0, 0), t, &[], &params, &mut rng_b).temperature);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let se = ((var(&a, ma) + var(&b, mb)) / n as f64).sqrt();
        let z = (ma - mb) / se;
        assert!(z.abs() < 4.0, "welch z = {z}");
    }

    #[test]
    fn ramp_first_crossing_is_finite() {
        let params = SensorParams::default();
        let ramp = NodeRamp {
            node: NODE,
            start: SimTime::from_ms(50.0),
            rate: params.ramp_rate,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let first = (0..1000)
            .map(|k| SimTime::from_ms(k as f64 * params.tick_ms))
            .find(|&t| predict_failure(&sample_temperature(NODE, t, &[ramp], &params, &mut rng), 70.0))
            .expect("ramp never crossed");
        // crossing needs 30 degrees of heat, about 60 ms after start
        let ms = first.as_ms();
        assert!((90.0..=140.0).contains(&ms), "first crossing at {ms}");
    }
}
