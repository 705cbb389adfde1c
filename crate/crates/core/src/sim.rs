//! Charging coordinator: request priority, capacity-constrained admission and
//! per-slot SoC evolution.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of 30-minute slots in a day.
pub const SLOTS_PER_DAY: usize = 48;

/// One EV's report for one time slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargingRequest {
    pub ev_id: u32,
    pub slot: u32,
    /// Fraction of full charge; 1 means the battery is full.
    pub soc: f64,
    /// Normalized time left before the request expires.
    pub tcc: f64,
}

impl ChargingRequest {
    pub fn new(ev_id: u32, slot: u32, soc: f64, tcc: f64) -> Result<Self> {
        let req = Self {
            ev_id,
            slot,
            soc,
            tcc,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.soc) {
            return Err(Error::InvalidRequest(format!(
                "ev {} soc {} outside [0, 1]",
                self.ev_id, self.soc
            )));
        }
        if !(0.0..=1.0).contains(&self.tcc) {
            return Err(Error::InvalidRequest(format!(
                "ev {} tcc {} outside [0, 1]",
                self.ev_id, self.tcc
            )));
        }
        if self.slot as usize >= SLOTS_PER_DAY {
            return Err(Error::InvalidRequest(format!(
                "ev {} slot {} outside [0, {SLOTS_PER_DAY})",
                self.ev_id, self.slot
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StationConfig {
    /// Energy the station can hand out per slot (P).
    pub capacity_kwh: f64,
    /// Battery size of every EV (B).
    pub battery_kwh: f64,
    /// Weight of the SoC term against the deadline term.
    pub upsilon: f64,
    /// Slots corresponding to a normalized TCC of 1.
    pub tcc_horizon_slots: u32,
}

impl Default for StationConfig {
    fn default() -> Self {
        Self {
            capacity_kwh: 270.0,
            battery_kwh: 27.0,
            upsilon: 0.5,
            tcc_horizon_slots: SLOTS_PER_DAY as u32,
        }
    }
}

impl StationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_kwh > 0.0) {
            return Err(Error::Config("capacity_kwh must be > 0".into()));
        }
        if !(self.battery_kwh > 0.0) {
            return Err(Error::Config("battery_kwh must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.upsilon) {
            return Err(Error::Config("upsilon must lie in [0, 1]".into()));
        }
        if self.tcc_horizon_slots == 0 {
            return Err(Error::Config("tcc_horizon_slots must be >= 1".into()));
        }
        Ok(())
    }

    /// Maps a count of remaining slots onto the normalized TCC scale.
    pub fn normalized_tcc(&self, remaining_slots: u32) -> f64 {
        (remaining_slots as f64 / self.tcc_horizon_slots as f64).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priority {
    pub omega: f64,
    pub demand_kwh: f64,
}

/// `omega = upsilon (1 - soc) + (1 - upsilon)(1 - tcc)`, demand `(1 - soc) B`.
pub fn priority(req: &ChargingRequest, cfg: &StationConfig) -> Priority {
    let soc_urgency = 1.0 - req.soc;
    let deadline_urgency = 1.0 - req.tcc;
    Priority {
        omega: cfg.upsilon * soc_urgency + (1.0 - cfg.upsilon) * deadline_urgency,
        demand_kwh: soc_urgency * cfg.battery_kwh,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Allocation {
    pub selected: BTreeSet<u32>,
    /// Granted energy for every EV in the batch, zero if not selected.
    pub granted_kwh: BTreeMap<u32, f64>,
    pub total_kwh: f64,
}

impl Allocation {
    pub fn granted(&self, ev_id: u32) -> f64 {
        self.granted_kwh.get(&ev_id).copied().unwrap_or(0.0)
    }

    pub fn is_selected(&self, ev_id: u32) -> bool {
        self.selected.contains(&ev_id)
    }
}

/// Admission order rank: zero-demand requests first, then priority per unit
/// of demanded energy, ties broken by omega then id.
///
/// `omega / (1 - soc)` orders identically to `omega / demand` since demand is
/// that denominator times B; keeping B out makes the order scale-free.
fn admission_order(requests: &[ChargingRequest], cfg: &StationConfig) -> Vec<(usize, Priority)> {
    let mut ranked: Vec<(usize, Priority, f64)> = requests
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = priority(r, cfg);
            let deficit = 1.0 - r.soc;
            let density = if deficit > 0.0 {
                p.omega / deficit
            } else {
                f64::INFINITY
            };
            (i, p, density)
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then(b.1.omega.total_cmp(&a.1.omega))
            .then(requests[a.0].ev_id.cmp(&requests[b.0].ev_id))
    });
    ranked.into_iter().map(|(i, p, _)| (i, p)).collect()
}

fn check_batch(requests: &[ChargingRequest]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in requests {
        r.validate()?;
        if !seen.insert(r.ev_id) {
            return Err(Error::DuplicateEv(r.ev_id));
        }
    }
    if let Some(first) = requests.first() {
        if let Some(other) = requests.iter().find(|r| r.slot != first.slot) {
            return Err(Error::MixedSlots(first.slot, other.slot));
        }
    }
    Ok(())
}

/// Greedy capacity-constrained admission for one slot.
///
/// Requests are visited in admission order and each is granted its full
/// demand if that still fits under `capacity_kwh`; ones that do not fit are
/// skipped and later, smaller requests may still be admitted.
pub fn schedule(requests: &[ChargingRequest], cfg: &StationConfig) -> Result<Allocation> {
    check_batch(requests)?;
    let mut alloc = Allocation::default();
    for r in requests {
        alloc.granted_kwh.insert(r.ev_id, 0.0);
    }
    for (i, p) in admission_order(requests, cfg) {
        let ev = requests[i].ev_id;
        if p.demand_kwh == 0.0 {
            alloc.selected.insert(ev);
            continue;
        }
        let next = alloc.total_kwh + p.demand_kwh;
        if next <= cfg.capacity_kwh {
            alloc.total_kwh = next;
            alloc.selected.insert(ev);
            alloc.granted_kwh.insert(ev, p.demand_kwh);
        }
    }
    Ok(alloc)
}

/// SoC after receiving `granted_kwh`, clamped to a full battery.
pub fn charged_soc(soc: f64, granted_kwh: f64, battery_kwh: f64) -> f64 {
    (soc + granted_kwh / battery_kwh).min(1.0)
}

/// Schedules one slot and returns each EV's SoC after charging, in input order.
pub fn simulate_slot(
    requests: &[ChargingRequest],
    cfg: &StationConfig,
) -> Result<(Allocation, Vec<(u32, f64)>)> {
    let alloc = schedule(requests, cfg)?;
    let next = requests
        .iter()
        .map(|r| (r.ev_id, charged_soc(r.soc, alloc.granted(r.ev_id), cfg.battery_kwh)))
        .collect();
    Ok((alloc, next))
}

/// Checks that each EV's slots strictly increase through a request stream.
pub fn validate_stream(requests: &[ChargingRequest]) -> Result<()> {
    let mut last: BTreeMap<u32, u32> = BTreeMap::new();
    for r in requests {
        r.validate()?;
        if let Some(&prev) = last.get(&r.ev_id) {
            if r.slot <= prev {
                return Err(Error::InvalidRequest(format!(
                    "ev {} slot {} does not follow slot {prev}",
                    r.ev_id, r.slot
                )));
            }
        }
        last.insert(r.ev_id, r.slot);
    }
    Ok(())
}

/// Reads `ev_id,slot,soc,tcc` rows.
pub fn read_requests<R: Read>(reader: R) -> Result<Vec<ChargingRequest>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let req: ChargingRequest = row?;
        req.validate()?;
        out.push(req);
    }
    Ok(out)
}

/// Splits a request stream into per-slot batches, ordered by slot.
pub fn group_by_slot(requests: &[ChargingRequest]) -> BTreeMap<u32, Vec<ChargingRequest>> {
    let mut batches: BTreeMap<u32, Vec<ChargingRequest>> = BTreeMap::new();
    for r in requests {
        batches.entry(r.slot).or_default().push(*r);
    }
    batches
}

#[derive(Serialize)]
struct AllocationRow {
    ev_id: u32,
    selected: bool,
    granted_kwh: f64,
}

/// Writes `ev_id,selected,granted_kwh` rows with a header.
pub fn write_allocation<W: Write>(writer: W, alloc: &Allocation) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (&ev_id, &granted_kwh) in &alloc.granted_kwh {
        wtr.serialize(AllocationRow {
            ev_id,
            selected: alloc.is_selected(ev_id),
            granted_kwh,
        })?;
    }
    wtr.flush()?;
    Ok(())
}
