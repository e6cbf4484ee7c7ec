//! Report writers. Column orders are fixed; floats carry 12 significant
//! digits. Layouts are documented in `docs/outputs.md`.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dlmc::{DlmcRow, Reconciliation};
use crate::error::{Error, Result};
use crate::network::{Feeder, FeederTopology, OperatingPoint};
use crate::opf::SolveReport;
use crate::pipeline::DlmcRun;
use crate::sensitivity::{FdCheck, Kind, SensitivityTensor};
use crate::thermal::ThermalRow;

/// Bumped whenever a column or JSON field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub const OPERATING_POINT_HEADER: [&str; 9] = [
    "period", "node", "v", "v_mag", "l", "p_flow", "q_flow", "p_net", "q_net",
];
pub const DER_HEADER: [&str; 6] = ["kind", "id", "period", "node", "p", "q"];
pub const THERMAL_HEADER: [&str; 7] = [
    "period",
    "l",
    "top_oil",
    "hotspot",
    "faa_exact",
    "faa_piecewise",
    "cumulative_lol",
];
pub const SENSITIVITY_HEADER: [&str; 6] =
    ["period", "site", "kind", "quantity", "element", "value"];
pub const SENSITIVITY_FD_HEADER: [&str; 2] = ["fd_value", "fd_error"];
pub const DLMC_HEADER: [&str; 12] = [
    "node",
    "period",
    "kind",
    "substation",
    "real_loss",
    "reactive_loss",
    "voltage",
    "ampacity",
    "transformer",
    "total",
    "solver_dual",
    "gap",
];
pub const RECONCILIATION_HEADER: [&str; 7] = [
    "node",
    "period",
    "kind",
    "total",
    "solver_dual",
    "gap",
    "flagged",
];

/// Twelve significant digits, with `-0` folded into `0`.
pub fn fmt_f(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.11e}")
}

struct Table<W: Write = File> {
    path: PathBuf,
    w: csv::Writer<W>,
}

impl Table {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Table::over(file, path, header)
    }
}

impl<W: Write> Table<W> {
    /// `path` only labels errors.
    fn over(inner: W, path: &Path, header: &[&str]) -> Result<Self> {
        let mut t = Self {
            path: path.to_path_buf(),
            w: csv::Writer::from_writer(inner),
        };
        t.row(header.iter().copied())?;
        Ok(t)
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).map_err(|e| self.csv_err(e))
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }

    fn csv_err(&self, e: csv::Error) -> Error {
        Error::io(&self.path, std::io::Error::other(e))
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Versioned<'a, T> {
    schema_version: u32,
    feeder: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_solve_report(path: &Path, feeder: &Feeder, report: &SolveReport) -> Result<()> {
    write_json(
        path,
        &Versioned {
            schema_version: SCHEMA_VERSION,
            feeder: &feeder.name,
            body: report,
        },
    )
}

/// One row per node and period. The root row carries the substation
/// injection in `p_flow`/`q_flow`; line quantities sit on the child node.
pub fn write_operating_point(
    path: &Path,
    topology: &FeederTopology,
    op: &OperatingPoint,
) -> Result<()> {
    let mut t = Table::create(path, &OPERATING_POINT_HEADER)?;
    for (k, s) in op.periods.iter().enumerate() {
        for j in 0..topology.n_nodes() {
            let (l, p, q) = if j == 0 {
                (0.0, s.p0, s.q0)
            } else {
                (s.l[j], s.p_flow[j], s.q_flow[j])
            };
            t.row([
                (k + 1).to_string(),
                topology.node(j).id.clone(),
                fmt_f(s.v[j]),
                fmt_f(s.v[j].max(0.0).sqrt()),
                fmt_f(l),
                fmt_f(p),
                fmt_f(q),
                fmt_f(s.p_net[j]),
                fmt_f(s.q_net[j]),
            ])?;
        }
    }
    t.finish()
}

pub fn write_der_schedule(path: &Path, feeder: &Feeder, report: &SolveReport) -> Result<()> {
    let topo = &feeder.topology;
    let mut t = Table::create(path, &DER_HEADER)?;
    for (s, pv) in feeder.pv.iter().enumerate() {
        for k in 0..report.periods {
            t.row([
                "pv".to_string(),
                pv.id.clone(),
                (k + 1).to_string(),
                topo.node(pv.node).id.clone(),
                fmt_f(report.der.pv_p[s][k]),
                fmt_f(report.der.pv_q[s][k]),
            ])?;
        }
    }
    for (e, ev) in feeder.ev.iter().enumerate() {
        for k in 0..report.periods {
            let node = ev
                .interval_at(k + 1)
                .map(|z| topo.node(ev.intervals[z].node).id.clone())
                .unwrap_or_default();
            t.row([
                "ev".to_string(),
                ev.id.clone(),
                (k + 1).to_string(),
                node,
                fmt_f(report.der.ev_p[e][k]),
                fmt_f(report.der.ev_q[e][k]),
            ])?;
        }
    }
    t.finish()
}

pub fn write_thermal(path: &Path, rows: &[ThermalRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_thermal_to(file, path, rows)
}

/// As [`write_thermal`], into any writer; `label` names it in errors.
pub fn write_thermal_to<W: Write>(w: W, label: &Path, rows: &[ThermalRow]) -> Result<()> {
    let mut t = Table::over(w, label, &THERMAL_HEADER)?;
    for r in rows {
        t.row([
            r.period.to_string(),
            fmt_f(r.l),
            fmt_f(r.top_oil),
            fmt_f(r.hotspot),
            fmt_f(r.faa_exact),
            fmt_f(r.faa_piecewise),
            fmt_f(r.cumulative_lol),
        ])?;
    }
    t.finish()
}

/// Thermal rows of every transformer at the optimum, day periods only,
/// prefixed by the transformer line id.
pub fn write_transformer_thermal(path: &Path, report: &SolveReport) -> Result<()> {
    let header: Vec<&str> = std::iter::once("transformer")
        .chain(THERMAL_HEADER)
        .collect();
    let mut t = Table::create(path, &header)?;
    for tr in &report.thermal {
        for k in 0..report.periods {
            let l = report.operating_point.periods[k].l[tr.node];
            t.row([
                tr.line.clone(),
                (k + 1).to_string(),
                fmt_f(l),
                fmt_f(tr.top_oil[k]),
                fmt_f(tr.hotspot[k]),
                fmt_f(tr.aging_exact[k]),
                fmt_f(tr.aging[k]),
                fmt_f(tr.cumulative_lol[k]),
            ])?;
        }
    }
    t.finish()
}

const QUANTITIES: [&str; 4] = ["P", "Q", "v", "l"];

/// The tensor in long form. With `fd`, indexed `[period − 1][2 (site − 1) + kind]`,
/// two extra columns hold the finite-difference value and its error.
pub fn write_sensitivities(
    path: &Path,
    topology: &FeederTopology,
    tensor: &SensitivityTensor,
    fd: Option<&[Vec<FdCheck>]>,
) -> Result<()> {
    let mut header: Vec<&str> = SENSITIVITY_HEADER.to_vec();
    if fd.is_some() {
        header.extend(SENSITIVITY_FD_HEADER);
    }
    let mut t = Table::create(path, &header)?;
    let root = topology.node(0).id.clone();
    for period in 1..=tensor.periods.len() {
        for site in 1..topology.n_nodes() {
            for kind in Kind::BOTH {
                let Some(s) = tensor.get(site, period, kind) else {
                    continue;
                };
                let check = fd.map(|f| &f[period - 1][2 * (site - 1) + kind as usize]);
                let site_id = &topology.node(site).id;
                let mut emit =
                    |idx: usize, quantity: &str, element: &str, value: f64| -> Result<()> {
                        let mut rec = vec![
                            period.to_string(),
                            site_id.clone(),
                            kind.as_str().to_string(),
                            quantity.to_string(),
                            element.to_string(),
                            fmt_f(value),
                        ];
                        if let Some(c) = check {
                            rec.push(fmt_f(c.finite_difference[idx]));
                            rec.push(fmt_f(c.errors[idx]));
                        }
                        t.row(rec)
                    };
                for j in 1..topology.n_nodes() {
                    for (q, name) in QUANTITIES.iter().enumerate() {
                        let idx = 4 * (j - 1) + q;
                        emit(idx, name, &topology.node(j).id, s.x[idx])?;
                    }
                }
                let n = 4 * topology.n_lines();
                emit(n, "P0", &root, s.dp0)?;
                emit(n + 1, "Q0", &root, s.dq0)?;
            }
        }
    }
    t.finish()
}

pub fn write_dlmc(
    path: &Path,
    topology: &FeederTopology,
    rows: &[DlmcRow],
    rec: &Reconciliation,
) -> Result<()> {
    let mut t = Table::create(path, &DLMC_HEADER)?;
    for (r, e) in rows.iter().zip(&rec.entries) {
        let mut rec = vec![
            topology.node(r.node).id.clone(),
            r.period.to_string(),
            r.kind.as_str().to_string(),
        ];
        rec.extend(r.components().iter().map(|&c| fmt_f(c)));
        rec.push(fmt_f(r.total));
        rec.push(fmt_f(r.solver_dual));
        rec.push(fmt_f(e.gap));
        t.row(rec)?;
    }
    t.finish()
}

pub fn write_reconciliation(
    path: &Path,
    topology: &FeederTopology,
    rec: &Reconciliation,
) -> Result<()> {
    let mut t = Table::create(path, &RECONCILIATION_HEADER)?;
    for e in &rec.entries {
        t.row([
            topology.node(e.node).id.clone(),
            e.period.to_string(),
            e.kind.as_str().to_string(),
            fmt_f(e.total),
            fmt_f(e.solver_dual),
            fmt_f(e.gap),
            e.flagged.to_string(),
        ])?;
    }
    t.finish()
}

/// Files written by the `solve` subcommand.
pub const SOLVE_FILES: [&str; 4] = [
    "solve_report.json",
    "operating_point.csv",
    "der_schedule.csv",
    "transformer_thermal.csv",
];

/// Files the `dlmc` subcommand adds on top of [`SOLVE_FILES`].
pub const DLMC_FILES: [&str; 3] = ["sensitivities.csv", "dlmc.csv", "reconciliation.csv"];

pub fn write_solve_bundle(dir: &Path, feeder: &Feeder, report: &SolveReport) -> Result<()> {
    ensure_dir(dir)?;
    write_solve_report(&dir.join(SOLVE_FILES[0]), feeder, report)?;
    write_operating_point(
        &dir.join(SOLVE_FILES[1]),
        &feeder.topology,
        &report.operating_point,
    )?;
    write_der_schedule(&dir.join(SOLVE_FILES[2]), feeder, report)?;
    write_transformer_thermal(&dir.join(SOLVE_FILES[3]), report)
}

pub fn write_dlmc_bundle(dir: &Path, feeder: &Feeder, run: &DlmcRun) -> Result<()> {
    write_solve_bundle(dir, feeder, &run.report)?;
    let topo = &feeder.topology;
    write_sensitivities(&dir.join(DLMC_FILES[0]), topo, &run.tensor, None)?;
    write_dlmc(
        &dir.join(DLMC_FILES[1]),
        topo,
        &run.rows,
        &run.reconciliation,
    )?;
    write_reconciliation(&dir.join(DLMC_FILES[2]), topo, &run.reconciliation)
}

/// Load series for the thermal simulator: a CSV with a `l` column (squared
/// current, p.u.) and an optional `ambient` column (°C). Other columns are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfileCsv {
    pub l: Vec<f64>,
    pub ambient: Option<Vec<f64>>,
}

pub fn read_load_profile(path: &Path) -> Result<LoadProfileCsv> {
    let parse_err = |message: String| Error::Parse {
        path: path.display().to_string(),
        message,
    };
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(format!("{other:?}")),
        })?;
    let headers = r.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let l_col = col("l").ok_or_else(|| parse_err("missing `l` column".into()))?;
    let amb_col = col("ambient");
    let mut l = Vec::new();
    let mut ambient = amb_col.map(|_| Vec::new());
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let num = |c: usize, name: &str| -> Result<f64> {
            let field = rec.get(c).unwrap_or("");
            field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| {
                    parse_err(format!(
                        "row {}: `{name}` is not a number: `{field}`",
                        k + 1
                    ))
                })
        };
        let lv = num(l_col, "l")?;
        if lv < 0.0 {
            return Err(parse_err(format!("row {}: `l` must be nonnegative", k + 1)));
        }
        l.push(lv);
        if let (Some(c), Some(a)) = (amb_col, ambient.as_mut()) {
            a.push(num(c, "ambient")?);
        }
    }
    if l.is_empty() {
        return Err(parse_err("load profile has no rows".into()));
    }
    Ok(LoadProfileCsv { l, ambient })
}
