//! Threshold-SNR link model over a recorded noise trace.

use crate::netsim::topology::{LinkGain, NoiseTrace};
use crate::{NodeId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    /// A frame is received iff `gain - noise >= snr_threshold_db`.
    /// `f64::NEG_INFINITY` makes every existing link lossless.
    pub snr_threshold_db: f64,
    pub propagation_ticks: SimTime,
    pub serialization_ticks_per_octet: SimTime,
    /// How long one noise sample stays current.
    pub noise_sample_ticks: SimTime,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            snr_threshold_db: 4.0,
            propagation_ticks: 10,
            serialization_ticks_per_octet: 32,
            noise_sample_ticks: 1_000,
        }
    }
}

impl ChannelConfig {
    pub fn lossless() -> Self {
        ChannelConfig {
            snr_threshold_db: f64::NEG_INFINITY,
            ..Self::default()
        }
    }

    pub fn airtime(&self, frame_len: usize) -> SimTime {
        self.propagation_ticks + self.serialization_ticks_per_octet * frame_len as SimTime
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Delivered { at: SimTime },
    Lost,
}

#[derive(Debug, Clone)]
pub struct Channel {
    noise: NoiseTrace,
    cfg: ChannelConfig,
    seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl Channel {
    pub fn new(noise: NoiseTrace, cfg: ChannelConfig, seed: u64) -> Self {
        Channel { noise, cfg, seed }
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    /// Noise seen by `receiver` at `now`: the trace read from a seeded
    /// per-receiver offset, advancing one sample every `noise_sample_ticks`.
    pub fn noise_sample(&self, receiver: NodeId, now: SimTime) -> i32 {
        let n = self.noise.len() as u64;
        let offset = splitmix64(self.seed ^ u64::from(receiver.0)) % n;
        let pos = now / self.cfg.noise_sample_ticks.max(1);
        self.noise.samples()[((offset + pos % n) % n) as usize]
    }

    pub fn deliver(&self, frame_len: usize, link: &LinkGain, now: SimTime) -> Delivery {
        let noise = f64::from(self.noise_sample(link.dst, now));
        if link.gain_dbm - noise >= self.cfg.snr_threshold_db {
            Delivery::Delivered {
                at: now + self.cfg.airtime(frame_len),
            }
        } else {
            Delivery::Lost
        }
    }
}
