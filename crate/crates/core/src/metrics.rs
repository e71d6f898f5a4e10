//! Counters accumulated over measured frames and the estimators built on
//! them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decode::DecodeResult;
use crate::error::{Error, Result};
use crate::model::SystemConfig;
use crate::sim::{DeviceState, FrameTrace};

/// Exact counts of non-negative integer samples. Small values live in a
/// dense table, the rare large ones in a map.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "SparseCounts", into = "SparseCounts")]
pub struct AgeHistogram {
    dense: Vec<u64>,
    overflow: BTreeMap<u64, u64>,
    total: u64,
}

const DENSE_LIMIT: u64 = 1 << 16;

#[derive(Serialize, Deserialize)]
struct SparseCounts {
    counts: BTreeMap<u64, u64>,
}

impl From<SparseCounts> for AgeHistogram {
    fn from(sparse: SparseCounts) -> Self {
        let mut h = AgeHistogram::default();
        for (value, count) in sparse.counts {
            h.add(value, count);
        }
        h
    }
}

impl From<AgeHistogram> for SparseCounts {
    fn from(h: AgeHistogram) -> Self {
        Self {
            counts: h.iter().collect(),
        }
    }
}

impl AgeHistogram {
    pub fn record(&mut self, value: u64) {
        self.add(value, 1);
    }

    fn add(&mut self, value: u64, count: u64) {
        if count == 0 {
            return;
        }
        if value < DENSE_LIMIT {
            let i = value as usize;
            if i >= self.dense.len() {
                self.dense.resize(i + 1, 0);
            }
            self.dense[i] += count;
        } else {
            *self.overflow.entry(value).or_insert(0) += count;
        }
        self.total += count;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of samples strictly greater than `threshold`.
    pub fn count_above(&self, threshold: u64) -> u64 {
        let start = threshold.saturating_add(1);
        let dense: u64 = if start < self.dense.len() as u64 {
            self.dense[start as usize..].iter().sum()
        } else {
            0
        };
        dense + self.overflow.range(start..).map(|(_, c)| c).sum::<u64>()
    }

    pub fn mean(&self) -> Option<f64> {
        (self.total > 0).then(|| {
            let sum: f64 = self.iter().map(|(v, c)| v as f64 * c as f64).sum();
            sum / self.total as f64
        })
    }

    /// (value, count) pairs with nonzero count, in increasing value order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.dense
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(v, c)| (v as u64, *c))
            .chain(self.overflow.iter().map(|(v, c)| (*v, *c)))
    }

    pub fn merge(&mut self, other: &AgeHistogram) {
        for (value, count) in other.iter() {
            self.add(value, count);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub num_devices: u32,
    pub frame_length: u32,
    /// Offered load G in packets per slot.
    pub channel_load: f64,
    pub frames: u64,
    /// Packets of active devices.
    pub generated: u64,
    /// Packets discarded because degree zero was drawn.
    pub discarded: u64,
    pub decoded: u64,
    pub replicas_intended: u64,
    pub replicas_dropped: u64,
    pub decoder_iterations: u64,
    pub subset_attempts: u64,
    /// Integral of the age over all devices and measured slots.
    pub aoi_area: f64,
    /// Age one frame after each measured frame end, one sample per device.
    pub end_of_frame_age: AgeHistogram,
    /// Frame-start battery levels; absent with unlimited energy.
    pub battery_histogram: Option<Vec<u64>>,
    /// Number of frames by count of packets decoded in them.
    pub decoded_per_frame: BTreeMap<u32, u64>,
}

impl SimulationReport {
    pub fn new(config: &SystemConfig) -> Self {
        Self {
            num_devices: config.num_devices,
            frame_length: config.frame_length,
            channel_load: config.channel_load(),
            frames: 0,
            generated: 0,
            discarded: 0,
            decoded: 0,
            replicas_intended: 0,
            replicas_dropped: 0,
            decoder_iterations: 0,
            subset_attempts: 0,
            aoi_area: 0.0,
            end_of_frame_age: AgeHistogram::default(),
            battery_histogram: config.battery.finite().map(|e| vec![0; e as usize + 1]),
            decoded_per_frame: BTreeMap::new(),
        }
    }

    pub fn lost(&self) -> u64 {
        self.generated - self.decoded
    }

    pub fn record_battery(&mut self, states: &[DeviceState]) {
        if let Some(hist) = self.battery_histogram.as_mut() {
            for s in states {
                hist[s.battery as usize] += 1;
            }
        }
    }

    pub fn record_frame(&mut self, trace: &FrameTrace, result: &DecodeResult) {
        self.frames += 1;
        self.generated += trace.devices.len() as u64;
        for dev in &trace.devices {
            if dev.intended.is_empty() {
                self.discarded += 1;
            }
            self.replicas_intended += dev.intended.len() as u64;
            self.replicas_dropped += dev.dropped().count() as u64;
        }
        self.decoded += result.decoded.len() as u64;
        self.decoder_iterations += result.iterations as u64;
        self.subset_attempts += result.subset_attempts;
        *self.decoded_per_frame.entry(result.decoded.len() as u32).or_insert(0) += 1;
    }

    /// Moves the age state across the frame starting at `frame_start`:
    /// ages grow linearly through the frame, then deliveries reset them at
    /// its end. With `measure` the frame's age area and end-of-frame
    /// samples are accumulated.
    pub fn advance_aoi(
        &mut self,
        states: &mut [DeviceState],
        trace: &FrameTrace,
        result: &DecodeResult,
        frame_start: i64,
        measure: bool,
    ) {
        let m = self.frame_length as i64;
        if measure {
            let half = (m * m) as f64 / 2.0;
            let area: f64 = states
                .iter()
                .map(|s| (m * (frame_start - s.last_delivered_generation)) as f64 + half)
                .sum();
            self.aoi_area += area;
        }
        for &local in &result.decoded {
            let dev = &trace.devices[local as usize];
            let state = &mut states[dev.device as usize];
            state.last_delivered_generation = state.last_delivered_generation.max(dev.generation);
        }
        if measure {
            let frame_end = frame_start + m;
            for s in states.iter() {
                self.end_of_frame_age
                    .record((frame_end - s.last_delivered_generation + m) as u64);
            }
        }
    }

    /// Adds the counters of another report over the same scenario.
    pub fn merge(&mut self, other: &SimulationReport) {
        debug_assert_eq!(
            (self.num_devices, self.frame_length),
            (other.num_devices, other.frame_length)
        );
        self.frames += other.frames;
        self.generated += other.generated;
        self.discarded += other.discarded;
        self.decoded += other.decoded;
        self.replicas_intended += other.replicas_intended;
        self.replicas_dropped += other.replicas_dropped;
        self.decoder_iterations += other.decoder_iterations;
        self.subset_attempts += other.subset_attempts;
        self.aoi_area += other.aoi_area;
        self.end_of_frame_age.merge(&other.end_of_frame_age);
        if let (Some(mine), Some(theirs)) = (self.battery_histogram.as_mut(), other.battery_histogram.as_ref()) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
        for (k, v) in &other.decoded_per_frame {
            *self.decoded_per_frame.entry(*k).or_insert(0) += v;
        }
    }
}

/// Fraction of generated packets that were not decoded, degree-zero
/// discards included.
pub fn estimate_plr(report: &SimulationReport) -> Result<f64> {
    if report.generated == 0 {
        return Err(Error::NoSamples);
    }
    Ok(report.lost() as f64 / report.generated as f64)
}

/// Binomial standard error of the PLR estimate.
pub fn plr_std_error(report: &SimulationReport) -> Result<f64> {
    let p = estimate_plr(report)?;
    Ok((p * (1.0 - p) / report.generated as f64).sqrt())
}

/// `G (1 - PLR)`.
pub fn estimate_throughput(report: &SimulationReport) -> Result<f64> {
    Ok(report.channel_load * (1.0 - estimate_plr(report)?))
}

/// Decoded packets per slot, counted directly.
pub fn measured_throughput(report: &SimulationReport) -> Result<f64> {
    if report.frames == 0 {
        return Err(Error::NoSamples);
    }
    Ok(report.decoded as f64 / (report.frames as f64 * report.frame_length as f64))
}

/// Time-average age per device, in slots.
pub fn average_aoi(report: &SimulationReport) -> Result<f64> {
    if report.frames == 0 {
        return Err(Error::NoSamples);
    }
    let slots = report.frames as f64 * report.frame_length as f64 * report.num_devices as f64;
    Ok(report.aoi_area / slots)
}

/// Time-average age divided by the number of devices.
pub fn average_aoi_normalized(report: &SimulationReport) -> Result<f64> {
    Ok(average_aoi(report)? / report.num_devices as f64)
}

pub fn empirical_battery_distribution(report: &SimulationReport) -> Result<Vec<f64>> {
    let hist = report.battery_histogram.as_ref().ok_or(Error::UnlimitedBattery)?;
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return Err(Error::NoSamples);
    }
    Ok(hist.iter().map(|c| *c as f64 / total as f64).collect())
}

/// Fraction of end-of-frame samples whose age, one frame later, exceeds
/// `theta`.
pub fn empirical_avp(report: &SimulationReport, theta: u64) -> Result<f64> {
    let h = &report.end_of_frame_age;
    if h.total() == 0 {
        return Err(Error::NoSamples);
    }
    Ok(h.count_above(theta) as f64 / h.total() as f64)
}
