//! Frame-by-frame Monte-Carlo engine.
//!
//! One frame goes through four stages: traffic generation (which devices
//! have an update from the elapsed frame), replica scheduling against the
//! frame-initial battery, the slot-ordered energy process that decides which
//! intended replicas are actually sent, and decoding at the receiver.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decode::{sic_conventional, sic_identify, DecodeResult, DecoderOptions};
use crate::error::{Error, Result};
use crate::metrics::SimulationReport;
use crate::model::{Adaptivity, Capacity, DegreeDistribution, SystemConfig};
use crate::rng::{stream, stream_key, uniform, Purpose, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Degrees never exceed the initial battery; conventional SIC.
    Avoid,
    /// Degrees may exceed the battery; the receiver locates dropped replicas.
    Identify,
    /// No energy constraint; conventional SIC.
    Unlimited,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Avoid => "avoid",
            Scheme::Identify => "identify",
            Scheme::Unlimited => "unlimited",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "avoid" => Ok(Scheme::Avoid),
            "identify" => Ok(Scheme::Identify),
            "unlimited" => Ok(Scheme::Unlimited),
            other => Err(Error::InvalidConfig(format!("unknown scheme {other:?}"))),
        }
    }
}

/// How the battery capacity limits harvesting inside a frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryModel {
    /// Energy committed at the frame start to the device's first
    /// `min(b, l)` replicas does not count against the capacity, so a unit
    /// harvested while the battery is nominally full is kept whenever it
    /// will be needed later in the frame. The initial battery level then
    /// evolves as `min(E, b - spent + harvested)`.
    #[default]
    CommittedExempt,
    /// A harvested unit is discarded whenever the battery holds `E` units.
    Strict,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceState {
    /// Battery level at the start of the current frame.
    pub battery: u32,
    /// Generation slot of the update to send in the current frame.
    pub pending_generation: Option<i64>,
    /// Generation slot of the freshest update delivered to the receiver.
    pub last_delivered_generation: i64,
    pub harvested_total: u64,
    pub spent_total: u64,
}

impl DeviceState {
    pub fn new(battery: u32, last_delivered_generation: i64) -> Self {
        Self {
            battery,
            pending_generation: None,
            last_delivered_generation,
            harvested_total: 0,
            spent_total: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub degree: u32,
    /// Zero-based, ascending slot indices.
    pub slots: Vec<u32>,
}

/// Ground truth of one active device in a frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceTx {
    pub device: u32,
    pub initial_battery: Option<u32>,
    pub generation: i64,
    /// Zero-based, ascending.
    pub intended: Vec<u32>,
    /// `sent[i]` tells whether the replica in `intended[i]` went out.
    pub sent: Vec<bool>,
}

impl DeviceTx {
    pub fn degree(&self) -> usize {
        self.intended.len()
    }

    pub fn transmitted(&self) -> impl Iterator<Item = u32> + '_ {
        self.intended
            .iter()
            .zip(&self.sent)
            .filter(|(_, s)| **s)
            .map(|(slot, _)| *slot)
    }

    pub fn dropped(&self) -> impl Iterator<Item = u32> + '_ {
        self.intended
            .iter()
            .zip(&self.sent)
            .filter(|(_, s)| !**s)
            .map(|(slot, _)| *slot)
    }

    pub fn transmits_in(&self, slot: u32) -> bool {
        self.intended
            .binary_search(&slot)
            .map(|i| self.sent[i])
            .unwrap_or(false)
    }

    pub fn has_drops(&self) -> bool {
        self.sent.iter().any(|s| !s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTrace {
    pub frame: u64,
    pub frame_length: u32,
    pub devices: Vec<DeviceTx>,
    /// Per slot, indices into `devices` of the replicas actually sent there.
    pub slots: Vec<Vec<u32>>,
}

impl FrameTrace {
    /// Builds a trace from (intended slots, dropped slots) per device, slots
    /// zero-based. Device ids are the pattern positions.
    pub fn from_patterns(frame_length: u32, patterns: &[(Vec<u32>, Vec<u32>)]) -> Result<Self> {
        let mut devices = Vec::with_capacity(patterns.len());
        for (id, (intended, dropped)) in patterns.iter().enumerate() {
            let mut intended = intended.clone();
            intended.sort_unstable();
            intended.dedup();
            if intended.iter().any(|s| *s >= frame_length) {
                return Err(Error::OutOfRange(format!("device {id} uses a slot past the frame")));
            }
            if dropped.iter().any(|s| !intended.contains(s)) {
                return Err(Error::OutOfRange(format!("device {id} drops an unintended slot")));
            }
            let sent = intended.iter().map(|s| !dropped.contains(s)).collect();
            devices.push(DeviceTx {
                device: id as u32,
                initial_battery: None,
                generation: 0,
                intended,
                sent,
            });
        }
        Ok(Self::assemble(0, frame_length, devices))
    }

    fn assemble(frame: u64, frame_length: u32, devices: Vec<DeviceTx>) -> Self {
        let mut slots = vec![Vec::new(); frame_length as usize];
        for (local, dev) in devices.iter().enumerate() {
            for slot in dev.transmitted() {
                slots[slot as usize].push(local as u32);
            }
        }
        Self {
            frame,
            frame_length,
            devices,
            slots,
        }
    }

    pub fn has_drops(&self) -> bool {
        self.devices.iter().any(DeviceTx::has_drops)
    }

    /// Checks that slot lists and per-device transmitted sets describe the
    /// same incidences.
    pub fn is_consistent(&self) -> bool {
        let mut count = 0usize;
        for (slot, list) in self.slots.iter().enumerate() {
            for &local in list {
                match self.devices.get(local as usize) {
                    Some(dev) if dev.transmits_in(slot as u32) => count += 1,
                    _ => return false,
                }
            }
        }
        let sent: usize = self.devices.iter().map(|d| d.transmitted().count()).sum();
        count == sent
            && self
                .devices
                .iter()
                .all(|d| d.intended.len() == d.sent.len() && d.intended.windows(2).all(|w| w[0] < w[1]))
    }
}

/// Inverse-CDF sampler over the rows of a degree distribution.
#[derive(Clone, Debug)]
pub struct DegreeSampler {
    cdf: Vec<Vec<f64>>,
}

impl DegreeSampler {
    pub fn new(dist: &DegreeDistribution) -> Self {
        let cdf = dist
            .rows()
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
        Self { cdf }
    }

    pub fn sample(&self, battery: usize, u: f64) -> u32 {
        let cdf = &self.cdf[battery.min(self.cdf.len() - 1)];
        // Zero-probability degrees are never returned, even at u = 0.
        let last = cdf.len() - 1;
        cdf.iter()
            .enumerate()
            .find(|(l, c)| u < **c && (*l == 0 || cdf[*l - 1] < **c))
            .map(|(l, _)| l)
            .unwrap_or_else(|| (0..=last).rev().find(|&l| l == 0 || cdf[l] > cdf[l - 1]).unwrap_or(0)) as u32
    }
}

/// Number of failures before the first success of a Bernoulli(p) sequence.
fn geometric_gap(rng: &mut SimRng, ln_fail: f64, p: f64) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    if p <= 0.0 {
        return u64::MAX;
    }
    let u: f64 = 1.0 - rng.random::<f64>();
    let gap = u.ln() / ln_fail;
    if gap >= u64::MAX as f64 {
        u64::MAX
    } else {
        gap as u64
    }
}

/// Draws the arrivals of the frame preceding `frame` for every device.
/// A device becomes active iff it had at least one arrival; its pending
/// update is the latest one. Returns the active device ids.
///
/// The slots between the latest arrival and the frame end are geometric,
/// so one uniform per device decides both activity and the generation
/// slot by inversion.
pub fn generate_traffic(config: &SystemConfig, states: &mut [DeviceState], frame: u64, seed: u64) -> Vec<u32> {
    let m = config.frame_length as i64;
    let frame_start = frame as i64 * m;
    let sigma = config.activation_prob();
    let ln_fail = (-config.update_prob).ln_1p();
    let mut active = Vec::new();
    for (device, state) in states.iter_mut().enumerate() {
        let u = uniform(stream_key(seed, frame, device as u32, Purpose::Traffic));
        state.pending_generation = if u < sigma {
            active.push(device as u32);
            let back = if ln_fail == f64::NEG_INFINITY {
                0
            } else {
                ((-u).ln_1p() / ln_fail).min((m - 1) as f64) as i64
            };
            Some(frame_start - 1 - back)
        } else {
            None
        };
    }
    active
}

/// Draws a degree from `sampler`'s row for `battery` and that many distinct
/// slots uniformly at random.
pub fn schedule_replicas(sampler: &DegreeSampler, battery: usize, frame_length: u32, rng: &mut SimRng) -> Schedule {
    let degree = sampler.sample(battery, rng.random::<f64>()).min(frame_length);
    let mut slots: Vec<u32> = sample(rng, frame_length as usize, degree as usize)
        .into_iter()
        .map(|s| s as u32)
        .collect();
    slots.sort_unstable();
    Schedule { degree, slots }
}

/// Per-frame constants of the harvest and spend process.
#[derive(Clone, Copy, Debug)]
struct EnergyProcess {
    capacity: Capacity,
    harvest_prob: f64,
    /// `ln(1 - harvest_prob)`, cached for geometric gaps.
    ln_stay: f64,
    frame_length: u32,
    model: BatteryModel,
}

/// Runs the slot-ordered energy process for one device: in every slot the
/// device first harvests (with probability eta), then transmits if the slot
/// is intended and the battery is not empty. Returns the sent flags.
fn run_device_energy(
    process: &EnergyProcess,
    state: &mut DeviceState,
    slots: &[u32],
    make_rng: impl FnOnce() -> SimRng,
) -> Vec<bool> {
    let EnergyProcess {
        capacity,
        harvest_prob,
        ln_stay,
        frame_length,
        model,
    } = *process;
    let Capacity::Finite(cap) = capacity else {
        state.spent_total += slots.len() as u64;
        return vec![true; slots.len()];
    };
    let m = frame_length as u64;
    let mut sent = vec![false; slots.len()];
    let mut battery = state.battery;
    let mut committed = match model {
        BatteryModel::CommittedExempt => battery.min(slots.len() as u32),
        BatteryModel::Strict => 0,
    };
    let mut next_tx = 0usize;
    let mut next_harvest: Option<u64> = None;
    let mut make_rng = Some(make_rng);
    let mut rng: Option<SimRng> = None;
    loop {
        if next_tx == slots.len() && battery - committed >= cap {
            break;
        }
        let rng = rng.get_or_insert_with(|| (make_rng.take().expect("generator factory"))());
        let harvest_at = *next_harvest.get_or_insert_with(|| geometric_gap(rng, ln_stay, harvest_prob));
        let tx_at = slots.get(next_tx).map_or(u64::MAX, |s| *s as u64);
        if harvest_at >= m && tx_at >= m {
            break;
        }
        if harvest_at <= tx_at {
            if battery - committed < cap {
                battery += 1;
                state.harvested_total += 1;
            }
            let gap = geometric_gap(rng, ln_stay, harvest_prob);
            next_harvest = Some(harvest_at.saturating_add(1).saturating_add(gap));
        } else {
            if battery >= 1 {
                battery -= 1;
                committed = committed.saturating_sub(1);
                sent[next_tx] = true;
                state.spent_total += 1;
            }
            next_tx += 1;
        }
    }
    debug_assert_eq!(committed, 0);
    state.battery = battery;
    sent
}

/// Plays one frame: harvests for every device and transmissions for the
/// scheduled ones. Updates the batteries in `states`.
pub fn run_frame(
    config: &SystemConfig,
    model: BatteryModel,
    states: &mut [DeviceState],
    schedules: Vec<(u32, Schedule)>,
    frame: u64,
    seed: u64,
) -> FrameTrace {
    let process = EnergyProcess {
        capacity: config.battery,
        harvest_prob: config.harvest_prob,
        ln_stay: (-config.harvest_prob).ln_1p(),
        frame_length: config.frame_length,
        model,
    };
    let mut devices = Vec::with_capacity(schedules.len());
    let mut scheduled = schedules.into_iter().peekable();
    for (device, state) in states.iter_mut().enumerate() {
        let device = device as u32;
        let schedule = match scheduled.peek() {
            Some((d, _)) if *d == device => scheduled.next().map(|(_, s)| s),
            _ => None,
        };
        let slots: &[u32] = schedule.as_ref().map_or(&[], |s| s.slots.as_slice());
        let initial_battery = config.battery.finite().map(|_| state.battery);
        let sent = run_device_energy(&process, state, slots, || stream(seed, frame, device, Purpose::Harvest));
        if let Some(schedule) = schedule {
            devices.push(DeviceTx {
                device,
                initial_battery,
                generation: state.pending_generation.unwrap_or(i64::MIN),
                intended: schedule.slots,
                sent,
            });
        }
    }
    FrameTrace::assemble(frame, config.frame_length, devices)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub scheme: Scheme,
    pub frames: u64,
    pub warmup: u64,
    pub seed: u64,
    pub battery_model: BatteryModel,
    pub decoder: DecoderOptions,
}

impl SimulationSettings {
    pub const DEFAULT_WARMUP: u64 = 100;

    pub fn new(scheme: Scheme, frames: u64, seed: u64) -> Self {
        Self {
            scheme,
            frames,
            warmup: Self::DEFAULT_WARMUP,
            seed,
            battery_model: BatteryModel::default(),
            decoder: DecoderOptions::default(),
        }
    }
}

/// Stateful multi-frame simulator. Frames are sequentially dependent through
/// the batteries and the AoI state.
pub struct Simulator {
    config: SystemConfig,
    settings: SimulationSettings,
    sampler: DegreeSampler,
    states: Vec<DeviceState>,
    frame: u64,
}

impl Simulator {
    pub fn new(config: &SystemConfig, dist: &DegreeDistribution, settings: SimulationSettings) -> Result<Self> {
        config.validate()?;
        let mut config = config.clone();
        match settings.scheme {
            Scheme::Unlimited => {
                if dist.num_levels() > 1 && dist.adaptivity() == Adaptivity::Adaptive {
                    return Err(Error::InvalidDistribution(
                        "unlimited energy needs a nonadaptive degree distribution".into(),
                    ));
                }
                config.battery = Capacity::Unlimited;
            }
            Scheme::Avoid | Scheme::Identify => {
                if config.battery.is_unlimited() {
                    return Err(Error::InvalidConfig(format!(
                        "scheme {} needs a finite battery capacity",
                        settings.scheme
                    )));
                }
                if settings.scheme == Scheme::Avoid {
                    dist.check_avoid_mask()?;
                }
            }
        }
        dist.check_shape(&config)?;
        let full = config.battery.finite().unwrap_or(0);
        let start_generation = if config.update_prob > 0.0 {
            -(1.0 / config.update_prob).round() as i64
        } else {
            0
        };
        let states = (0..config.num_devices)
            .map(|_| DeviceState::new(full, start_generation))
            .collect();
        Ok(Self {
            sampler: DegreeSampler::new(dist),
            config,
            settings,
            states,
            frame: 0,
        })
    }

    pub fn states(&self) -> &[DeviceState] {
        &self.states
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    /// Plays one frame and decodes it.
    pub fn step(&mut self) -> Result<(FrameTrace, DecodeResult)> {
        let frame = self.frame;
        let seed = self.settings.seed;
        let active = generate_traffic(&self.config, &mut self.states, frame, seed);
        let schedules = active
            .into_iter()
            .map(|device| {
                let battery = self.states[device as usize].battery as usize;
                let mut rng = stream(seed, frame, device, Purpose::Schedule);
                (
                    device,
                    schedule_replicas(&self.sampler, battery, self.config.frame_length, &mut rng),
                )
            })
            .collect();
        let trace = run_frame(
            &self.config,
            self.settings.battery_model,
            &mut self.states,
            schedules,
            frame,
            seed,
        );
        let result = match self.settings.scheme {
            Scheme::Identify => sic_identify(&trace, &self.settings.decoder),
            Scheme::Avoid | Scheme::Unlimited => sic_conventional(&trace, &self.settings.decoder)?,
        };
        self.frame += 1;
        Ok((trace, result))
    }

    /// Runs the warm-up frames, then the measured ones.
    pub fn run(&mut self, warmup: u64, frames: u64) -> Result<SimulationReport> {
        let mut report = SimulationReport::new(&self.config);
        if frames == 0 {
            return Ok(report);
        }
        for _ in 0..warmup {
            let frame_start = self.frame as i64 * self.config.frame_length as i64;
            let (trace, result) = self.step()?;
            report.advance_aoi(&mut self.states, &trace, &result, frame_start, false);
        }
        for _ in 0..frames {
            report.record_battery(&self.states);
            let frame_start = self.frame as i64 * self.config.frame_length as i64;
            let (trace, result) = self.step()?;
            report.record_frame(&trace, &result);
            report.advance_aoi(&mut self.states, &trace, &result, frame_start, true);
        }
        Ok(report)
    }
}

/// Simulates `settings.frames` measured frames after `settings.warmup`
/// warm-up frames. Deterministic given the seed.
pub fn run_simulation(
    config: &SystemConfig,
    dist: &DegreeDistribution,
    settings: &SimulationSettings,
) -> Result<SimulationReport> {
    let mut sim = Simulator::new(config, dist, settings.clone())?;
    sim.run(settings.warmup, settings.frames)
}

/// Independent replications with derived seeds, merged into one report.
/// Each replication runs its own warm-up.
pub fn run_replications(
    config: &SystemConfig,
    dist: &DegreeDistribution,
    settings: &SimulationSettings,
    replications: u64,
) -> Result<SimulationReport> {
    let run_one = |i: u64| {
        let mut s = settings.clone();
        s.seed = crate::rng::child_seed(settings.seed, i);
        run_simulation(config, dist, &s)
    };
    #[cfg(feature = "parallel")]
    let reports: Vec<Result<SimulationReport>> = {
        use rayon::prelude::*;
        (0..replications).into_par_iter().map(run_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let reports: Vec<Result<SimulationReport>> = (0..replications).map(run_one).collect();
    let mut merged: Option<SimulationReport> = None;
    for report in reports {
        let report = report?;
        match merged.as_mut() {
            Some(m) => m.merge(&report),
            None => merged = Some(report),
        }
    }
    Ok(merged.unwrap_or_else(|| SimulationReport::new(config)))
}
