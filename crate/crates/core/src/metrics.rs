//! Utilization, speedup and relative energy from simulator statistics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::stats::{CycleBreakdown, EventCounts, SimStats};

pub const COST_TABLE_VERSION: u32 = 1;

/// Relative energy per event, in arbitrary consistent units.
///
/// The defaults only encode an ordering (cell op < register-file read <
/// buffer access); they are not calibrated to any process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    pub version: u32,
    pub cell_op: f64,
    pub adder_tree_op: f64,
    pub meta_rf_read: f64,
    pub buffer_read: f64,
    pub buffer_write: f64,
    pub network_switch: f64,
    pub simd_op: f64,
    pub tile_load: f64,
    pub writeback: f64,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable {
            version: COST_TABLE_VERSION,
            cell_op: 1.0,
            adder_tree_op: 2.0,
            meta_rf_read: 2.0,
            buffer_read: 6.0,
            buffer_write: 6.0,
            network_switch: 4.0,
            simd_op: 3.0,
            tile_load: 4.0,
            writeback: 6.0,
        }
    }
}

impl CostTable {
    fn entries(&self) -> [(&'static str, f64); 9] {
        [
            ("cell_op", self.cell_op),
            ("adder_tree_op", self.adder_tree_op),
            ("meta_rf_read", self.meta_rf_read),
            ("buffer_read", self.buffer_read),
            ("buffer_write", self.buffer_write),
            ("network_switch", self.network_switch),
            ("simd_op", self.simd_op),
            ("tile_load", self.tile_load),
            ("writeback", self.writeback),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != COST_TABLE_VERSION {
            return Err(Error::Config(format!(
                "cost table version {} is not supported (expected {COST_TABLE_VERSION})",
                self.version
            )));
        }
        for (name, v) in self.entries() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("cost {name} = {v} must be a finite non-negative number")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: CostTable = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    /// Every cost multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        CostTable {
            version: self.version,
            cell_op: self.cell_op * factor,
            adder_tree_op: self.adder_tree_op * factor,
            meta_rf_read: self.meta_rf_read * factor,
            buffer_read: self.buffer_read * factor,
            buffer_write: self.buffer_write * factor,
            network_switch: self.network_switch * factor,
            simd_op: self.simd_op * factor,
            tile_load: self.tile_load * factor,
            writeback: self.writeback * factor,
        }
    }
}

/// Effective over total cells of the engaged macros; `None` for a run that
/// engaged no macro.
pub fn utilization(stats: &SimStats) -> Option<f64> {
    (stats.total_cells > 0).then(|| stats.effective_cells as f64 / stats.total_cells as f64)
}

fn same_workload(a: &SimStats, b: &SimStats) -> Result<()> {
    let dims = |s: &SimStats| s.workload.iter().map(|w| (w.m, w.n, w.k)).collect::<Vec<_>>();
    if dims(a) != dims(b) {
        return Err(Error::WorkloadMismatch(format!(
            "layer shapes differ: {:?} vs {:?}",
            dims(a),
            dims(b)
        )));
    }
    Ok(())
}

/// Baseline cycles over DB-PIM cycles.
pub fn speedup(db: &SimStats, base: &SimStats) -> Result<f64> {
    same_workload(db, base)?;
    if db.cycles.total == 0 {
        return Err(Error::InvalidArgument("speedup is undefined for a zero-cycle run".into()));
    }
    Ok(base.cycles.total as f64 / db.cycles.total as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub cell_op: f64,
    pub adder_tree_op: f64,
    pub meta_rf_read: f64,
    pub buffer_read: f64,
    pub buffer_write: f64,
    pub network_switch: f64,
    pub simd_op: f64,
    pub tile_load: f64,
    pub writeback: f64,
    pub total: f64,
}

pub fn energy(stats: &SimStats, costs: &CostTable) -> EnergyBreakdown {
    let e = &stats.events;
    let mut b = EnergyBreakdown {
        cell_op: e.cell_ops as f64 * costs.cell_op,
        adder_tree_op: e.adder_tree_ops as f64 * costs.adder_tree_op,
        meta_rf_read: e.meta_rf_reads as f64 * costs.meta_rf_read,
        buffer_read: e.buffer_reads as f64 * costs.buffer_read,
        buffer_write: e.buffer_writes as f64 * costs.buffer_write,
        network_switch: e.network_switches as f64 * costs.network_switch,
        simd_op: e.simd_ops as f64 * costs.simd_op,
        tile_load: e.tile_loads as f64 * costs.tile_load,
        writeback: e.writebacks as f64 * costs.writeback,
        total: 0.0,
    };
    b.total = b.cell_op
        + b.adder_tree_op
        + b.meta_rf_read
        + b.buffer_read
        + b.buffer_write
        + b.network_switch
        + b.simd_op
        + b.tile_load
        + b.writeback;
    b
}

/// DB-PIM energy over baseline energy on the same workload; `None` when the
/// baseline costs nothing under `costs`.
pub fn normalized_energy(db: &SimStats, base: &SimStats, costs: &CostTable) -> Result<Option<f64>> {
    same_workload(db, base)?;
    let b = energy(base, costs).total;
    Ok((b > 0.0).then(|| energy(db, costs).total / b))
}

/// Speedup predicted with zero overheads: filter parallelism (8 binary
/// columns against `columns_per_filter`), times the inverse of the fraction
/// of reduction rows still routed, times 8 over the average bits processed
/// per row pass.
pub fn closed_form_speedup(columns_per_filter: f64, active_row_fraction: f64, avg_active_bits: f64) -> f64 {
    (8.0 / columns_per_filter) * (1.0 / active_row_fraction) * (8.0 / avg_active_bits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub u_act: Option<f64>,
    pub baseline_u_act: Option<f64>,
    pub speedup: f64,
    pub normalized_energy: Option<f64>,
    pub cost_table_version: u32,
    pub cycles: CycleBreakdown,
    pub baseline_cycles: CycleBreakdown,
    pub energy: EnergyBreakdown,
    pub baseline_energy: EnergyBreakdown,
    pub events: EventCounts,
    pub baseline_events: EventCounts,
}

impl Report {
    pub fn new(db: &SimStats, base: &SimStats, costs: &CostTable) -> Result<Self> {
        if db.baseline || !base.baseline {
            return Err(Error::InvalidArgument(
                "a report joins DB-PIM stats (first) with baseline stats (second)".into(),
            ));
        }
        costs.validate()?;
        Ok(Report {
            u_act: utilization(db),
            baseline_u_act: utilization(base),
            speedup: speedup(db, base)?,
            normalized_energy: normalized_energy(db, base, costs)?,
            cost_table_version: costs.version,
            cycles: db.cycles.clone(),
            baseline_cycles: base.cycles.clone(),
            energy: energy(db, costs),
            baseline_energy: energy(base, costs),
            events: db.events.clone(),
            baseline_events: base.events.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn rows(&self) -> Vec<(String, String, String)> {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let c = &self.cycles;
        let bc = &self.baseline_cycles;
        let mut rows = vec![
            ("u_act".into(), opt(self.u_act), opt(self.baseline_u_act)),
            ("speedup".into(), format!("{:.4}", self.speedup), "1.0000".into()),
            ("normalized_energy".into(), opt(self.normalized_energy), "1.0000".into()),
        ];
        for (name, a, b) in [
            ("cycles.total", c.total, bc.total),
            ("cycles.row_pass", c.row_pass, bc.row_pass),
            ("cycles.tile_load", c.tile_load, bc.tile_load),
            ("cycles.accum", c.accum, bc.accum),
            ("cycles.writeback", c.writeback, bc.writeback),
            ("cycles.simd", c.simd, bc.simd),
        ] {
            rows.push((name.into(), a.to_string(), b.to_string()));
        }
        let e = &self.energy;
        let be = &self.baseline_energy;
        for (name, a, b) in [
            ("energy.cell_op", e.cell_op, be.cell_op),
            ("energy.adder_tree_op", e.adder_tree_op, be.adder_tree_op),
            ("energy.meta_rf_read", e.meta_rf_read, be.meta_rf_read),
            ("energy.buffer_read", e.buffer_read, be.buffer_read),
            ("energy.buffer_write", e.buffer_write, be.buffer_write),
            ("energy.network_switch", e.network_switch, be.network_switch),
            ("energy.simd_op", e.simd_op, be.simd_op),
            ("energy.tile_load", e.tile_load, be.tile_load),
            ("energy.writeback", e.writeback, be.writeback),
            ("energy.total", e.total, be.total),
        ] {
            rows.push((name.into(), format!("{a:.1}"), format!("{b:.1}")));
        }
        rows
    }

    /// Aligned three-column table.
    pub fn to_text(&self) -> String {
        let rows = self.rows();
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(6);
        let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max(6);
        let w2 = rows.iter().map(|r| r.2.len()).max().unwrap_or(0).max(8);
        let mut s = String::new();
        let _ = writeln!(s, "{:<w0$}  {:>w1$}  {:>w2$}", "metric", "db-pim", "baseline");
        for (a, b, c) in rows {
            let _ = writeln!(s, "{a:<w0$}  {b:>w1$}  {c:>w2$}");
        }
        s
    }

    /// `metric,db_pim,baseline` with one row per table line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,db_pim,baseline\n");
        for (a, b, c) in self.rows() {
            let _ = writeln!(s, "{a},{b},{c}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::stats::LayerWorkload;

    fn stats(baseline: bool, cycles: u64, cell_ops: u64) -> SimStats {
        let mut s = SimStats {
            baseline,
            workload: vec![LayerWorkload { layer_id: "l".into(), m: 4, n: 8, k: 16 }],
            effective_cells: 30,
            total_cells: 40,
            ..SimStats::default()
        };
        s.cycles.total = cycles;
        s.events.cell_ops = cell_ops;
        s.events.buffer_reads = 10;
        s
    }

    #[test]
    fn speedup_and_mismatch() {
        let a = stats(false, 100, 5);
        assert_eq!(speedup(&a, &a).unwrap(), 1.0);
        assert_eq!(speedup(&a, &stats(true, 400, 5)).unwrap(), 4.0);
        let mut other = stats(true, 400, 5);
        other.workload[0].k = 17;
        assert!(matches!(speedup(&a, &other), Err(Error::WorkloadMismatch(_))));
    }

    #[test]
    fn energy_is_linear() {
        let s = stats(false, 1, 7);
        let c = CostTable::default();
        assert_eq!(energy(&s, &c).total, 7.0 + 60.0);
        assert_eq!(energy(&s, &c.scaled(2.0)).total, 2.0 * energy(&s, &c).total);
        assert_eq!(energy(&s, &c.scaled(0.0)).total, 0.0);
    }

    #[test]
    fn utilization_absent_without_work() {
        assert_eq!(utilization(&stats(false, 1, 1)), Some(0.75));
        assert_eq!(utilization(&SimStats::default()), None);
    }

    #[test]
    fn cost_table_validation() {
        let json = serde_json::to_string(&CostTable::default()).unwrap();
        assert_eq!(CostTable::from_json(&json).unwrap(), CostTable::default());
        assert!(CostTable::from_json(&json.replace("\"cell_op\":1.0", "\"cell_op\":-1.0")).is_err());
        assert!(CostTable::from_json(&json.replace("\"version\":1", "\"version\":2")).is_err());
        assert!(CostTable::from_json(&json.replace('}', ",\"extra\":1}")).is_err());
    }

    #[test]
    fn closed_form() {
        assert_eq!(closed_form_speedup(2.0, 1.0, 8.0), 4.0);
        assert_eq!(closed_form_speedup(2.0, 0.5, 8.0), 8.0);
        assert_eq!(closed_form_speedup(1.0, 1.0, 4.0), 16.0);
    }

    #[test]
    fn report_renders() {
        let r = Report::new(&stats(false, 100, 5), &stats(true, 300, 50), &CostTable::default()).unwrap();
        assert_eq!(r.speedup, 3.0);
        let text = r.to_text();
        assert!(text.lines().next().unwrap().starts_with("metric"));
        assert_eq!(r.to_csv().lines().count(), text.lines().count());
        let back: Report = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(Report::new(&stats(true, 1, 1), &stats(true, 1, 1), &CostTable::default()).is_err());
    }
}
