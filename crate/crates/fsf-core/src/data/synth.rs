//! Deterministic synthetic telemetry corpus.
//!
//! Each vehicle gets a smooth base track (position integrates speed, speed
//! integrates a gentle sinusoidal acceleration) and a behaviour class drawn
//! from the configured mix. Attack classes perturb the channel they are named
//! after while leaving the rest of the message truthful; denial-of-service
//! families additionally sample the track ten times denser so consecutive
//! messages are closer in both time and space.
//!
//! Class ids:
//!
//! |  id | behaviour                 |  id | behaviour                     |
//! |-----|---------------------------|-----|-------------------------------|
//! |  0  | normal                    | 10  | disruptive (replays own past) |
//! |  1  | constant position         | 11  | data replay (stale self)      |
//! |  2  | constant position offset  | 12  | delayed messages              |
//! |  3  | random position           | 13  | DoS (dense sampling)          |
//! |  4  | random position offset    | 14  | DoS + random position         |
//! |  5  | constant speed            | 15  | DoS + disruptive              |
//! |  6  | constant speed offset     | 16  | data replay sybil (ghost)     |
//! |  7  | random speed              | 17  | traffic congestion sybil      |
//! |  8  | random speed offset       | 18  | DoS + random speed            |
//! |  9  | eventual stop             | 19  | DoS + disruptive sybil        |

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, TraceRecord, FEATURES, NUM_CLASSES};
use crate::rng::{derive_rng, Stream};

/// Arena side length for initial positions (metres).
const ARENA: f64 = 1000.0;
/// Base message interval (seconds).
const BASE_DT: f64 = 1.0;
/// Sampling-density factor for denial-of-service families.
const DOS_TIME_SCALE: f64 = 0.1;

/// Corpus shape: how many vehicles, how long each stream runs, and which
/// behaviour classes appear with what probability.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub vehicles: usize,
    pub stream_len: usize,
    /// `(class id, probability)` pairs; probabilities must sum to 1.
    pub class_mix: Vec<(u8, f64)>,
    /// Peak of the sinusoidal base acceleration. Zero gives straight-line
    /// constant-speed tracks.
    pub accel_amplitude: f64,
}

impl SynthSpec {
    /// Uniform mix over the given classes.
    pub fn uniform(vehicles: usize, stream_len: usize, classes: &[u8]) -> Self {
        let p = 1.0 / classes.len() as f64;
        Self {
            vehicles,
            stream_len,
            class_mix: classes.iter().map(|&c| (c, p)).collect(),
            accel_amplitude: 0.3,
        }
    }

    /// Uniform mix over all twenty classes.
    pub fn all_classes(vehicles: usize, stream_len: usize) -> Self {
        let classes: Vec<u8> = (0..NUM_CLASSES as u8).collect();
        Self::uniform(vehicles, stream_len, &classes)
    }

    fn validate(&self) -> Result<(), DataError> {
        let sum: f64 = self.class_mix.iter().map(|(_, p)| p).sum();
        if self.class_mix.iter().any(|&(c, p)| p < 0.0 || c >= NUM_CLASSES as u8)
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(DataError::BadClassMix(sum));
        }
        Ok(())
    }
}

/// Classes whose perturbation families are separable at window scale by
/// construction: they move a channel's level or variance far outside the
/// normal envelope (frozen or far-offset positions, out-of-range or
/// high-variance speeds, stopped or crawling kinematics, ten-times-denser
/// sampling). The replay/delay/sybil families (10, 11, 12, 15, 16, 19) mimic
/// plausible tracks and are intentionally hard to tell apart from normal
/// traffic or from each other within a single window.
pub fn distinct_classes() -> &'static [u8] {
    &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 13, 14, 17, 18]
}

#[derive(Debug, Clone, Copy)]
struct TrackState {
    pos: [f64; 2],
    spd: [f64; 2],
    acl: [f64; 2],
    hed: [f64; 2],
}

/// Smooth kinematic base track sampled every `dt` seconds.
fn base_track(
    rng: &mut ChaCha8Rng,
    len: usize,
    dt: f64,
    accel_amplitude: f64,
) -> Vec<TrackState> {
    let pos0 = [rng.gen_range(0.0..ARENA), rng.gen_range(0.0..ARENA)];
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = rng.gen_range(5.0..15.0);
    let spd0 = [speed * angle.cos(), speed * angle.sin()];
    let period = rng.gen_range(8.0..20.0);
    let phase = [
        rng.gen_range(0.0..std::f64::consts::TAU),
        rng.gen_range(0.0..std::f64::consts::TAU),
    ];

    let mut out = Vec::with_capacity(len);
    let mut pos = pos0;
    let mut spd = spd0;
    let mut hed = unit(spd0).unwrap_or([1.0, 0.0]);
    for k in 0..len {
        let t = k as f64 * dt;
        let acl = [
            accel_amplitude * (std::f64::consts::TAU * t / period + phase[0]).sin(),
            accel_amplitude * (std::f64::consts::TAU * t / period + phase[1]).sin(),
        ];
        if let Some(u) = unit(spd) {
            hed = u;
        }
        out.push(TrackState { pos, spd, acl, hed });
        pos = [pos[0] + spd[0] * dt, pos[1] + spd[1] * dt];
        spd = [spd[0] + acl[0] * dt, spd[1] + acl[1] * dt];
    }
    out
}

fn unit(v: [f64; 2]) -> Option<[f64; 2]> {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    (n > 1e-9).then(|| [v[0] / n, v[1] / n])
}

/// Generates the full corpus. Each vehicle's stream is drawn from its own
/// seed-derived stream, so corpora are reproducible record-for-record and
/// insensitive to vehicle iteration order.
pub fn generate_corpus(spec: &SynthSpec, seed: u64) -> Result<Vec<TraceRecord>, DataError> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.vehicles * spec.stream_len);
    for v in 0..spec.vehicles {
        let mut rng = derive_rng(seed, Stream::Synth, &[v as u64]);
        let label = sample_class(&spec.class_mix, &mut rng);
        out.extend(vehicle_stream(v as u64, label, spec, &mut rng));
    }
    Ok(out)
}

fn sample_class(mix: &[(u8, f64)], rng: &mut ChaCha8Rng) -> u8 {
    let x: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for &(c, p) in mix {
        acc += p;
        if x < acc {
            return c;
        }
    }
    mix.last().map(|&(c, _)| c).unwrap_or(0)
}

fn vehicle_stream(
    vehicle_id: u64,
    label: u8,
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<TraceRecord> {
    let len = spec.stream_len;
    let dos = matches!(label, 13 | 14 | 15 | 18 | 19);
    let dt = if dos { BASE_DT * DOS_TIME_SCALE } else { BASE_DT };
    let t0 = rng.gen_range(0.0..50.0);
    let track = base_track(rng, len, dt, spec.accel_amplitude);

    // Per-vehicle attack parameters, drawn once.
    let const_pos_offset = {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let dist = rng.gen_range(1500.0..3000.0);
        [dist * angle.cos(), dist * angle.sin()]
    };
    let const_spd = {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let mag = rng.gen_range(20.0..30.0);
        [mag * angle.cos(), mag * angle.sin()]
    };
    let const_spd_offset = {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let mag = rng.gen_range(10.0..20.0);
        [mag * angle.cos(), mag * angle.sin()]
    };
    let stop_at = rng.gen_range(3..=8usize);
    let replay_lag = rng.gen_range(5..=10usize);
    // Ghost track for sybil families: a second plausible vehicle.
    let ghost = if matches!(label, 16 | 19) {
        base_track(rng, len, dt, spec.accel_amplitude)
    } else {
        Vec::new()
    };

    let mut records = Vec::with_capacity(len);
    let mut congestion_pos = track.first().map_or([0.0, 0.0], |s| s.pos);
    for k in 0..len {
        let truth = track[k];
        let mut st = truth;
        let mut ts = t0 + k as f64 * dt;
        match label {
            0 => {}
            1 => st.pos = track[0].pos,
            2 => {
                st.pos = [truth.pos[0] + const_pos_offset[0], truth.pos[1] + const_pos_offset[1]]
            }
            3 => st.pos = [rng.gen_range(0.0..ARENA), rng.gen_range(0.0..ARENA)],
            4 => {
                st.pos = [
                    truth.pos[0] + rng.gen_range(-50.0..50.0),
                    truth.pos[1] + rng.gen_range(-50.0..50.0),
                ]
            }
            5 => {
                st.spd = const_spd;
                st.hed = unit(st.spd).unwrap_or(st.hed);
            }
            6 => {
                st.spd = [truth.spd[0] + const_spd_offset[0], truth.spd[1] + const_spd_offset[1]];
                st.hed = unit(st.spd).unwrap_or(st.hed);
            }
            7 => {
                st.spd = [rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0)];
                st.hed = unit(st.spd).unwrap_or(st.hed);
            }
            8 => {
                st.spd = [
                    truth.spd[0] + rng.gen_range(-10.0..10.0),
                    truth.spd[1] + rng.gen_range(-10.0..10.0),
                ];
                st.hed = unit(st.spd).unwrap_or(st.hed);
            }
            9 => {
                if k >= stop_at {
                    let frozen = track[stop_at];
                    st.pos = frozen.pos;
                    st.spd = [0.0, 0.0];
                    st.acl = [0.0, 0.0];
                    st.hed = frozen.hed;
                }
            }
            10 | 15 => {
                // Disruptive: half the messages replay a random earlier state.
                if k > 0 && rng.gen_bool(0.5) {
                    st = track[rng.gen_range(0..k)];
                }
            }
            11 => st = track[k.saturating_sub(replay_lag)],
            12 => {
                // Delayed queue: kinematics are current but the stamp lags
                // further behind as the backlog grows.
                ts = t0 + k as f64 * dt * 0.7;
            }
            13 => {}
            14 => st.pos = [rng.gen_range(0.0..ARENA), rng.gen_range(0.0..ARENA)],
            16 => st = ghost[k],
            17 => {
                // Crawling cluster: barely moving, noisy heading.
                st.spd = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
                congestion_pos = [
                    congestion_pos[0] + rng.gen_range(-2.0..2.0),
                    congestion_pos[1] + rng.gen_range(-2.0..2.0),
                ];
                st.pos = congestion_pos;
                st.acl = [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)];
                st.hed = unit(st.spd).unwrap_or(st.hed);
            }
            18 => {
                st.spd = [rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0)];
                st.hed = unit(st.spd).unwrap_or(st.hed);
            }
            19 => {
                st = ghost[k];
                if k > 0 && rng.gen_bool(0.5) {
                    st = ghost[rng.gen_range(0..k)];
                }
            }
            _ => unreachable!("class mix validated"),
        }
        let mut features = [0.0; FEATURES];
        features[0] = ts;
        features[1] = st.pos[0];
        features[2] = st.pos[1];
        features[3] = st.spd[0];
        features[4] = st.spd[1];
        features[5] = st.acl[0];
        features[6] = st.acl[1];
        features[7] = st.hed[0];
        features[8] = st.hed[1];
        records.push(TraceRecord { vehicle_id, msg_index: k as u64, features, label });
    }
    records
}
