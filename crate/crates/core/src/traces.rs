//! Synthetic vehicle-day SoC traces and labeled datasets.
//!
//! A day is a sequence of drive / charge / idle segments simulated at one
//! minute resolution and sampled every 30 minutes into 48 values.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sim::SLOTS_PER_DAY;

pub const MINUTES_PER_DAY: u32 = 24 * 60;
pub const SAMPLE_EVERY_MINUTES: u32 = 30;

/// SoC after charging at `charge_rate_kw` for `dt_h` hours.
pub fn soc_after_charge(soc: f64, charge_rate_kw: f64, dt_h: f64, battery_kwh: f64) -> f64 {
    (soc + charge_rate_kw * dt_h / battery_kwh).min(1.0)
}

/// SoC after driving with power draw `expenditure_rate_kw` for `dt_h` hours.
pub fn soc_after_drive(soc: f64, expenditure_rate_kw: f64, dt_h: f64, battery_kwh: f64) -> f64 {
    (soc - expenditure_rate_kw * dt_h / battery_kwh).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Benign = 0,
    Malicious = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Benign),
            1 => Ok(Label::Malicious),
            other => Err(Error::Dataset(format!("label {other} is not 0 or 1"))),
        }
    }

    pub fn as_index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayTrace {
    pub vehicle_id: u32,
    pub day: u32,
    pub soc_seq: [f64; SLOTS_PER_DAY],
}

/// One dataset row: 48 SoC features plus the class label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledTuple {
    pub features: [f64; SLOTS_PER_DAY],
    pub label: Label,
}

impl LabeledTuple {
    pub fn benign(features: [f64; SLOTS_PER_DAY]) -> Self {
        Self {
            features,
            label: Label::Benign,
        }
    }

    pub fn malicious(features: [f64; SLOTS_PER_DAY]) -> Self {
        Self {
            features,
            label: Label::Malicious,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Drive,
    Charge,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub minutes: u32,
    /// Charging power, or drain while driving; zero when idle.
    pub rate_kw: f64,
}

/// A realized day: starting SoC and the segments actually simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySchedule {
    pub initial_soc: f64,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleProfile {
    pub battery_kwh: f64,
    pub charge_rate_kw: f64,
    /// Drain while driving, drawn uniformly per segment.
    pub drive_rate_kw: (f64, f64),
    pub initial_soc: (f64, f64),
    /// Relative odds of drive, charge and idle segments.
    pub segment_weights: (f64, f64, f64),
    pub drive_minutes: (u32, u32),
    pub charge_minutes: (u32, u32),
    pub idle_minutes: (u32, u32),
    /// Forces a charge segment when a segment would start below this SoC.
    pub recharge_below: Option<f64>,
}

impl Default for VehicleProfile {
    fn default() -> Self {
        Self {
            battery_kwh: 27.0,
            charge_rate_kw: 6.6,
            drive_rate_kw: (4.0, 8.0),
            initial_soc: (0.6, 1.0),
            segment_weights: (0.5, 0.2, 0.3),
            drive_minutes: (20, 90),
            charge_minutes: (30, 120),
            idle_minutes: (10, 60),
            recharge_below: Some(0.3),
        }
    }
}

impl VehicleProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("vehicle profile: {m}")));
        if !(self.battery_kwh > 0.0) {
            return bad("battery_kwh must be > 0");
        }
        if !(self.charge_rate_kw > 0.0) || !(self.drive_rate_kw.0 > 0.0) {
            return bad("rates must be > 0");
        }
        if self.drive_rate_kw.0 > self.drive_rate_kw.1 {
            return bad("drive_rate_kw range is reversed");
        }
        let (lo, hi) = self.initial_soc;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("initial_soc must be a sub-range of [0, 1]");
        }
        let (d, c, i) = self.segment_weights;
        if d < 0.0 || c < 0.0 || i < 0.0 || d + c + i <= 0.0 {
            return bad("segment weights must be non-negative and not all zero");
        }
        for (name, (a, b)) in [
            ("drive_minutes", self.drive_minutes),
            ("charge_minutes", self.charge_minutes),
            ("idle_minutes", self.idle_minutes),
        ] {
            if a == 0 || a > b {
                return bad(&format!("{name} must be a non-empty range of positive minutes"));
            }
        }
        Ok(())
    }

    /// Largest SoC change possible over one sampling interval.
    pub fn max_step(&self) -> f64 {
        let rate = self.charge_rate_kw.max(self.drive_rate_kw.1);
        rate * (SAMPLE_EVERY_MINUTES as f64 / 60.0) / self.battery_kwh
    }

    fn next_kind<R: Rng + ?Sized>(&self, soc: f64, rng: &mut R) -> SegmentKind {
        let (d, c, i) = self.segment_weights;
        if let Some(th) = self.recharge_below {
            if soc < th && c > 0.0 {
                return SegmentKind::Charge;
            }
        }
        let x = rng.random::<f64>() * (d + c + i);
        if x < d {
            SegmentKind::Drive
        } else if x < d + c {
            SegmentKind::Charge
        } else {
            SegmentKind::Idle
        }
    }
}

fn step_minute(soc: f64, seg: &Segment, battery_kwh: f64) -> f64 {
    const MINUTE_H: f64 = 1.0 / 60.0;
    match seg.kind {
        SegmentKind::Drive => soc_after_drive(soc, seg.rate_kw, MINUTE_H, battery_kwh),
        SegmentKind::Charge => soc_after_charge(soc, seg.rate_kw, MINUTE_H, battery_kwh),
        SegmentKind::Idle => soc,
    }
}

/// Simulates one day and also returns the schedule that produced it.
pub fn gen_vehicle_day_with_schedule<R: Rng + ?Sized>(
    profile: &VehicleProfile,
    rng: &mut R,
) -> (DayTrace, DaySchedule) {
    let (lo, hi) = profile.initial_soc;
    let initial_soc = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let mut soc = initial_soc;
    let mut seq = [0.0; SLOTS_PER_DAY];
    let mut segments = Vec::new();
    let mut minute = 0u32;

    while minute < MINUTES_PER_DAY {
        let kind = profile.next_kind(soc, rng);
        let (range, rate_kw) = match kind {
            SegmentKind::Drive => {
                let (a, b) = profile.drive_rate_kw;
                let rate = if a == b { a } else { rng.random_range(a..=b) };
                (profile.drive_minutes, rate)
            }
            SegmentKind::Charge => (profile.charge_minutes, profile.charge_rate_kw),
            SegmentKind::Idle => (profile.idle_minutes, 0.0),
        };
        let dwell = rng.random_range(range.0..=range.1).min(MINUTES_PER_DAY - minute);
        let seg = Segment {
            kind,
            minutes: dwell,
            rate_kw,
        };
        for _ in 0..dwell {
            if minute % SAMPLE_EVERY_MINUTES == 0 {
                seq[(minute / SAMPLE_EVERY_MINUTES) as usize] = soc;
            }
            soc = step_minute(soc, &seg, profile.battery_kwh);
            minute += 1;
        }
        segments.push(seg);
    }

    (
        DayTrace {
            vehicle_id: 0,
            day: 0,
            soc_seq: seq,
        },
        DaySchedule {
            initial_soc,
            segments,
        },
    )
}

pub fn gen_vehicle_day<R: Rng + ?Sized>(profile: &VehicleProfile, rng: &mut R) -> DayTrace {
    gen_vehicle_day_with_schedule(profile, rng).0
}

/// Generates `n_vehicles x n_days` traces; vehicle `v` uses
/// `profiles[v % profiles.len()]` and each day draws from its own stream.
pub fn build_benign_traces(
    n_vehicles: u32,
    n_days: u32,
    profiles: &[VehicleProfile],
    seed: u64,
) -> Result<Vec<DayTrace>> {
    if n_vehicles == 0 || n_days == 0 {
        return Err(Error::Config("n_vehicles and n_days must be >= 1".into()));
    }
    if profiles.is_empty() {
        return Err(Error::Config("at least one vehicle profile is required".into()));
    }
    for p in profiles {
        p.validate()?;
    }
    let traces = (0..n_vehicles * n_days)
        .into_par_iter()
        .map(|i| {
            let (vehicle_id, day) = (i / n_days, i % n_days);
            let profile = &profiles[vehicle_id as usize % profiles.len()];
            let mut r = rng::stream(seed, &[rng::tag::TRACES, vehicle_id as u64, day as u64]);
            let mut trace = gen_vehicle_day(profile, &mut r);
            trace.vehicle_id = vehicle_id;
            trace.day = day;
            trace
        })
        .collect();
    Ok(traces)
}

pub fn build_benign_dataset(
    n_vehicles: u32,
    n_days: u32,
    profiles: &[VehicleProfile],
    seed: u64,
) -> Result<Vec<LabeledTuple>> {
    Ok(build_benign_traces(n_vehicles, n_days, profiles, seed)?
        .into_iter()
        .map(|t| LabeledTuple::benign(t.soc_seq))
        .collect())
}

pub fn csv_header() -> Vec<String> {
    (0..SLOTS_PER_DAY)
        .map(|i| format!("s{i}"))
        .chain(std::iter::once("label".to_string()))
        .collect()
}

/// Writes the `s0..s47,label` layout.
pub fn write_dataset<W: Write>(writer: W, rows: &[LabeledTuple]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(csv_header())?;
    let mut record = Vec::with_capacity(SLOTS_PER_DAY + 1);
    for row in rows {
        record.clear();
        record.extend(row.features.iter().map(|v| v.to_string()));
        record.push((row.label as u8).to_string());
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<LabeledTuple>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(csv_header().iter().map(String::as_str)) {
        return Err(Error::Dataset(
            "expected header s0..s47,label".to_string(),
        ));
    }
    let mut rows = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let mut features = [0.0; SLOTS_PER_DAY];
        for (i, f) in features.iter_mut().enumerate() {
            let v: f64 = record[i]
                .trim()
                .parse()
                .map_err(|_| Error::Dataset(format!("row {line}: bad value in s{i}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Dataset(format!("row {line}: s{i}={v} outside [0, 1]")));
            }
            *f = v;
        }
        let label: u8 = record[SLOTS_PER_DAY]
            .trim()
            .parse()
            .map_err(|_| Error::Dataset(format!("row {line}: bad label")))?;
        rows.push(LabeledTuple {
            features,
            label: Label::from_u8(label)?,
        });
    }
    Ok(rows)
}
