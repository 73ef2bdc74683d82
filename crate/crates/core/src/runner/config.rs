//! Run configuration: parsing with aggregated errors, defaults and a
//! normalized JSON form.

use std::f64::consts::PI;
use std::fmt;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::meanfield::closed_form_crossing_time;
use crate::observables::default_resolution;
use crate::schedule::RampSchedule;
use crate::spin::{coherent_state, mean_spin, CollectiveOperators, DickeVector, ModelParams, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    MeanField,
    Cumulant2,
    Master,
    Trajectories,
}

impl Backend {
    pub const ALL: [Backend; 4] = [Backend::MeanField, Backend::Cumulant2, Backend::Master, Backend::Trajectories];

    pub fn name(self) -> &'static str {
        match self {
            Backend::MeanField => "meanfield",
            Backend::Cumulant2 => "cumulant2",
            Backend::Master => "master",
            Backend::Trajectories => "trajectories",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == s)
    }

    pub fn default_tol(self) -> f64 {
        match self {
            Backend::MeanField => crate::meanfield::DEFAULT_TOL,
            Backend::Cumulant2 => crate::cumulant::DEFAULT_TOL,
            Backend::Master | Backend::Trajectories => crate::lindblad::DEFAULT_TOL,
        }
    }

    pub fn supports(self, obs: Observable) -> bool {
        use Observable::*;
        match obs {
            Moments => true,
            Chi2 | C2 => self != Backend::MeanField,
            C3 | Cn => self == Backend::Master,
            QFunction => matches!(self, Backend::Master | Backend::Trajectories),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Observable {
    Moments,
    Chi2,
    C2,
    C3,
    Cn,
    QFunction,
}

impl Observable {
    pub const ALL: [Observable; 6] = [
        Observable::Moments,
        Observable::Chi2,
        Observable::C2,
        Observable::C3,
        Observable::Cn,
        Observable::QFunction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Observable::Moments => "moments",
            Observable::Chi2 => "chi2",
            Observable::C2 => "c2",
            Observable::C3 => "c3",
            Observable::Cn => "cn",
            Observable::QFunction => "qfunction",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == s)
    }
}

/// `t_pulse` of a schedule: fixed, or the time of peak `C3` found by a
/// master-equation pre-pass at the dispersive-stage parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseTime {
    Fixed(f64),
    PeakC3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub n_atoms: usize,
    pub kappa: f64,
    pub omega_max: f64,
    pub omega_min: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub t_pulse: PulseTime,
    pub t_ramp: f64,
}

impl ScheduleSpec {
    pub fn with_t_pulse(&self, t_pulse: f64) -> Result<RampSchedule> {
        RampSchedule::new(
            self.n_atoms,
            self.kappa,
            self.omega_max,
            self.omega_min,
            self.lambda_max,
            self.lambda_min,
            t_pulse,
            self.t_ramp,
        )
    }

    /// Parameters of the first (dispersive) stage.
    pub fn initial_params(&self) -> Result<ModelParams> {
        ModelParams::new(self.n_atoms, self.kappa, self.omega_max, self.lambda_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    Params(ModelParams),
    Schedule(ScheduleSpec),
}

impl Model {
    pub fn n_atoms(&self) -> usize {
        match self {
            Model::Params(p) => p.n_atoms(),
            Model::Schedule(s) => s.n_atoms,
        }
    }

    /// Parameters in effect at the start of the run.
    pub fn initial_params(&self) -> Result<ModelParams> {
        match self {
            Model::Params(p) => Ok(*p),
            Model::Schedule(s) => s.initial_params(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Spin coherent state `|theta, phi>`.
    Angles { theta: f64, phi: f64 },
    /// Explicit Dicke amplitudes, index `p = J - m`; normalized on use.
    Amplitudes(Vec<C64>),
}

impl InitialState {
    pub fn to_vector(&self, n_atoms: usize) -> Result<DickeVector> {
        match self {
            InitialState::Angles { theta, phi } => coherent_state(n_atoms, *theta, *phi),
            InitialState::Amplitudes(a) => {
                if a.len() != n_atoms + 1 {
                    return Err(Error::DimensionMismatch {
                        expected: n_atoms + 1,
                        actual: a.len(),
                    });
                }
                Ok(DickeVector::new(a.clone())?.normalized())
            }
        }
    }

    /// Bloch angles of the mean spin.
    pub fn angles(&self, n_atoms: usize) -> Result<(f64, f64)> {
        match self {
            InitialState::Angles { theta, phi } => Ok((*theta, *phi)),
            InitialState::Amplitudes(_) => {
                let psi = self.to_vector(n_atoms)?;
                let ops = CollectiveOperators::new(n_atoms)?;
                let amps: Vec<C64> = psi.amplitudes.iter().copied().collect();
                let m = mean_spin(&ops, &amps);
                let norm = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                if norm < 1e-9 * n_atoms as f64 {
                    return Err(Error::UndefinedMeanSpin { norm });
                }
                Ok(((m[2] / norm).clamp(-1.0, 1.0).acos(), m[1].atan2(m[0])))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndTime {
    Fixed(f64),
    /// Multiple of the mean-field equator-crossing time at the initial
    /// parameters.
    PulseMultiple(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSpec {
    pub t_start: f64,
    pub end: EndTime,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QFunctionSpec {
    pub times: Vec<f64>,
    pub n_theta: usize,
    pub n_phi: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    /// Falls back to the command-line flag, then the environment.
    pub dir: Option<String>,
    pub prefix: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub ode: f64,
    pub trace_abort: f64,
    pub check_positivity: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    pub n_trajectories: usize,
    pub dt_max: f64,
    pub jump_tolerance: f64,
    pub write_individual: bool,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            n_trajectories: 100,
            dt_max: 10.0,
            jump_tolerance: 1e-9,
            write_individual: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub backend: Backend,
    pub model: Model,
    pub initial: InitialState,
    pub time: TimeSpec,
    /// Sorted and free of duplicates.
    pub observables: Vec<Observable>,
    /// Order of the symmetrized `cn` column, 2 to 4.
    pub cn_order: usize,
    pub qfunction: Option<QFunctionSpec>,
    pub output: OutputSpec,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub trajectories: Option<TrajectorySpec>,
}

impl RunConfig {
    pub fn n_atoms(&self) -> usize {
        self.model.n_atoms()
    }

    pub fn wants(&self, obs: Observable) -> bool {
        self.observables.contains(&obs)
    }

    /// `(t_start, t_end)`.
    pub fn t_span(&self) -> Result<(f64, f64)> {
        let t0 = self.time.t_start;
        match self.time.end {
            EndTime::Fixed(t1) => Ok((t0, t1)),
            EndTime::PulseMultiple(k) => {
                let (theta, _) = self.initial.angles(self.n_atoms())?;
                let params = self.model.initial_params()?;
                let t_cross = closed_form_crossing_time(theta, &params).ok_or_else(|| {
                    Error::Config(vec![
                        "time.pulse_multiple: needs an initial mean spin above the equator and a nonzero dissipative rate"
                            .into(),
                    ])
                })?;
                Ok((t0, t0 + k * t_cross))
            }
        }
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("backend".into(), json!(self.backend.name()));
        match &self.model {
            Model::Params(p) => {
                m.insert(
                    "params".into(),
                    json!({"n_atoms": p.n_atoms(), "kappa": p.kappa(), "omega": p.omega(), "lambda": p.lambda()}),
                );
            }
            Model::Schedule(s) => {
                let t_pulse = match s.t_pulse {
                    PulseTime::Fixed(t) => json!(t),
                    PulseTime::PeakC3 => json!("peak_c3"),
                };
                m.insert(
                    "schedule".into(),
                    json!({
                        "n_atoms": s.n_atoms,
                        "kappa": s.kappa,
                        "omega_max": s.omega_max,
                        "omega_min": s.omega_min,
                        "lambda_max": s.lambda_max,
                        "lambda_min": s.lambda_min,
                        "t_pulse": t_pulse,
                        "t_ramp": s.t_ramp,
                    }),
                );
            }
        }
        let initial = match &self.initial {
            InitialState::Angles { theta, phi } => json!({"theta": theta, "phi": phi}),
            InitialState::Amplitudes(a) => {
                json!({"amplitudes": a.iter().map(|z| json!([z.re, z.im])).collect::<Vec<_>>()})
            }
        };
        m.insert("initial".into(), initial);
        let time = match self.time.end {
            EndTime::Fixed(t1) => json!({"t_start": self.time.t_start, "t_end": t1, "samples": self.time.samples}),
            EndTime::PulseMultiple(k) => {
                json!({"t_start": self.time.t_start, "pulse_multiple": k, "samples": self.time.samples})
            }
        };
        m.insert("time".into(), time);
        m.insert(
            "observables".into(),
            json!(self.observables.iter().map(|o| o.name()).collect::<Vec<_>>()),
        );
        m.insert("cn_order".into(), json!(self.cn_order));
        if let Some(q) = &self.qfunction {
            m.insert(
                "qfunction".into(),
                json!({"times": q.times, "n_theta": q.n_theta, "n_phi": q.n_phi}),
            );
        }
        m.insert("output".into(), json!({"dir": self.output.dir, "prefix": self.output.prefix}));
        m.insert("seed".into(), json!(self.seed));
        m.insert(
            "tolerances".into(),
            json!({
                "ode": self.tolerances.ode,
                "trace_abort": self.tolerances.trace_abort,
                "check_positivity": self.tolerances.check_positivity,
            }),
        );
        if let Some(t) = &self.trajectories {
            m.insert(
                "trajectories".into(),
                json!({
                    "n_trajectories": t.n_trajectories,
                    "dt_max": t.dt_max,
                    "jump_tolerance": t.jump_tolerance,
                    "write_individual": t.write_individual,
                }),
            );
        }
        Value::Object(m)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("config serializes")
    }
}

/// Error collector for walking a JSON document.
#[derive(Default)]
pub(crate) struct Checker {
    pub errors: Vec<String>,
}

impl Checker {
    pub fn err(&mut self, path: &str, msg: impl fmt::Display) {
        self.errors.push(format!("{path}: {msg}"));
    }

    pub fn object<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a Map<String, Value>> {
        match v.as_object() {
            Some(m) => Some(m),
            None => {
                self.err(path, "expected an object");
                None
            }
        }
    }

    pub fn allow_keys(&mut self, m: &Map<String, Value>, path: &str, allowed: &[&str]) {
        for k in m.keys() {
            if !allowed.contains(&k.as_str()) {
                self.err(&join(path, k), format!("unknown field (expected one of: {})", allowed.join(", ")));
            }
        }
    }

    fn number(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.err(path, "expected a finite number");
                None
            }
        }
    }

    pub fn req_f64(&mut self, m: &Map<String, Value>, path: &str, key: &str) -> Option<f64> {
        let p = join(path, key);
        match m.get(key) {
            Some(v) => self.number(v, &p),
            None => {
                self.err(&p, "missing required field");
                None
            }
        }
    }

    pub fn opt_f64(&mut self, m: &Map<String, Value>, path: &str, key: &str, default: f64) -> f64 {
        match m.get(key) {
            Some(Value::Null) | None => default,
            Some(v) => self.number(v, &join(path, key)).unwrap_or(default),
        }
    }

    fn count(&mut self, v: &Value, path: &str) -> Option<u64> {
        match v.as_u64() {
            Some(x) => Some(x),
            None => {
                self.err(path, "expected a non-negative integer");
                None
            }
        }
    }

    pub fn req_usize(&mut self, m: &Map<String, Value>, path: &str, key: &str) -> Option<usize> {
        let p = join(path, key);
        match m.get(key) {
            Some(v) => self.count(v, &p).map(|x| x as usize),
            None => {
                self.err(&p, "missing required field");
                None
            }
        }
    }

    pub fn opt_u64(&mut self, m: &Map<String, Value>, path: &str, key: &str, default: u64) -> u64 {
        match m.get(key) {
            Some(Value::Null) | None => default,
            Some(v) => self.count(v, &join(path, key)).unwrap_or(default),
        }
    }

    pub fn opt_bool(&mut self, m: &Map<String, Value>, path: &str, key: &str, default: bool) -> bool {
        match m.get(key) {
            Some(Value::Null) | None => default,
            Some(Value::Bool(b)) => *b,
            Some(_) => {
                self.err(&join(path, key), "expected true or false");
                default
            }
        }
    }

    pub fn f64_list(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let Some(items) = v.as_array() else {
            self.err(path, "expected an array of numbers");
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        let mut ok = true;
        for (i, x) in items.iter().enumerate() {
            match self.number(x, &format!("{path}[{i}]")) {
                Some(x) => out.push(x),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    pub fn finish<T>(self, value: Option<T>) -> Result<T> {
        match value {
            Some(v) if self.errors.is_empty() => Ok(v),
            _ => Err(Error::Config(if self.errors.is_empty() {
                vec!["invalid configuration".into()]
            } else {
                self.errors
            })),
        }
    }
}

pub(crate) fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

const TOP_KEYS: [&str; 12] = [
    "backend",
    "params",
    "schedule",
    "initial",
    "time",
    "observables",
    "cn_order",
    "qfunction",
    "output",
    "seed",
    "tolerances",
    "trajectories",
];

/// Parses and checks a configuration document, reporting every problem
/// found.
pub fn validate_config(text: &str) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("invalid JSON: {e}")]))?;
    validate_value(&value, "")
}

pub(crate) fn validate_value(value: &Value, path: &str) -> Result<RunConfig> {
    let mut c = Checker::default();
    let cfg = parse_run(&mut c, value, path);
    c.finish(cfg)
}

fn parse_model(c: &mut Checker, top: &Map<String, Value>, path: &str) -> Option<Model> {
    match (top.get("params"), top.get("schedule")) {
        (Some(_), Some(_)) => {
            c.err(path_or_root(path), "give either params or schedule, not both");
            None
        }
        (None, None) => {
            c.err(&join(path, "params"), "missing required field (or give schedule)");
            None
        }
        (Some(v), None) => {
            let p = join(path, "params");
            let m = c.object(v, &p)?;
            c.allow_keys(m, &p, &["n_atoms", "kappa", "omega", "lambda"]);
            let n = c.req_usize(m, &p, "n_atoms");
            let kappa = c.opt_f64(m, &p, "kappa", 1.0);
            let omega = c.req_f64(m, &p, "omega");
            let lambda = c.req_f64(m, &p, "lambda");
            // range checks still run on whatever was given
            match ModelParams::new(n.unwrap_or(1), kappa, omega.unwrap_or(1.0), lambda.unwrap_or(0.0)) {
                Ok(params) => (n.is_some() && omega.is_some() && lambda.is_some()).then_some(Model::Params(params)),
                Err(e) => {
                    c.err(&p, e);
                    None
                }
            }
        }
        (None, Some(v)) => {
            let p = join(path, "schedule");
            let m = c.object(v, &p)?;
            c.allow_keys(
                m,
                &p,
                &["n_atoms", "kappa", "omega_max", "omega_min", "lambda_max", "lambda_min", "t_pulse", "t_ramp"],
            );
            let n = c.req_usize(m, &p, "n_atoms");
            let kappa = c.opt_f64(m, &p, "kappa", 1.0);
            let omega_max = c.req_f64(m, &p, "omega_max");
            let omega_min = c.req_f64(m, &p, "omega_min");
            let lambda_max = c.req_f64(m, &p, "lambda_max");
            let lambda_min = c.req_f64(m, &p, "lambda_min");
            let t_ramp = c.opt_f64(m, &p, "t_ramp", 0.0);
            let t_pulse = match m.get("t_pulse") {
                Some(Value::String(s)) if s == "peak_c3" => Some(PulseTime::PeakC3),
                Some(v) => c.number(v, &join(&p, "t_pulse")).map(PulseTime::Fixed),
                None => {
                    c.err(&join(&p, "t_pulse"), "missing required field (a time or \"peak_c3\")");
                    None
                }
            };
            let spec = ScheduleSpec {
                n_atoms: n?,
                kappa,
                omega_max: omega_max?,
                omega_min: omega_min?,
                lambda_max: lambda_max?,
                lambda_min: lambda_min?,
                t_pulse: t_pulse?,
                t_ramp,
            };
            // check the invariants with a stand-in pulse time when it is resolved later
            let probe = match spec.t_pulse {
                PulseTime::Fixed(t) => t,
                PulseTime::PeakC3 => f64::MAX,
            };
            let mut ok = true;
            if let Err(e) = spec.with_t_pulse(probe) {
                c.err(&p, e);
                ok = false;
            }
            if let Err(e) = spec.initial_params() {
                c.err(&p, e);
                ok = false;
            }
            ok.then_some(Model::Schedule(spec))
        }
    }
}

fn path_or_root(path: &str) -> &str {
    if path.is_empty() {
        "(root)"
    } else {
        path
    }
}

fn parse_initial(c: &mut Checker, v: Option<&Value>, path: &str, n_atoms: Option<usize>) -> Option<InitialState> {
    let p = join(path, "initial");
    let Some(v) = v else {
        c.err(&p, "missing required field");
        return None;
    };
    let m = c.object(v, &p)?;
    if let Some(a) = m.get("amplitudes") {
        c.allow_keys(m, &p, &["amplitudes"]);
        let ap = join(&p, "amplitudes");
        let Some(items) = a.as_array() else {
            c.err(&ap, "expected an array of [re, im] pairs");
            return None;
        };
        let mut amps = Vec::with_capacity(items.len());
        for (i, z) in items.iter().enumerate() {
            let zp = format!("{ap}[{i}]");
            match z.as_array().map(|x| x.as_slice()) {
                Some([re, im]) => {
                    let (re, im) = (c.number(re, &zp), c.number(im, &zp));
                    amps.push(C64::new(re?, im?));
                }
                _ => {
                    c.err(&zp, "expected [re, im]");
                    return None;
                }
            }
        }
        if let Some(n) = n_atoms {
            if amps.len() != n + 1 {
                c.err(&ap, format!("expected {} amplitudes for {n} atoms, got {}", n + 1, amps.len()));
                return None;
            }
        }
        if amps.iter().map(|z| z.norm_sqr()).sum::<f64>() == 0.0 {
            c.err(&ap, "state vector is zero");
            return None;
        }
        Some(InitialState::Amplitudes(amps))
    } else {
        c.allow_keys(m, &p, &["theta", "phi", "amplitudes"]);
        let theta = c.req_f64(m, &p, "theta");
        let phi = c.req_f64(m, &p, "phi");
        let theta = theta?;
        if !(0.0..=PI).contains(&theta) {
            c.err(&join(&p, "theta"), "must lie in [0, pi]");
            return None;
        }
        Some(InitialState::Angles { theta, phi: phi? })
    }
}

fn parse_time(c: &mut Checker, v: Option<&Value>, path: &str) -> Option<TimeSpec> {
    let p = join(path, "time");
    let Some(v) = v else {
        c.err(&p, "missing required field");
        return None;
    };
    let m = c.object(v, &p)?;
    c.allow_keys(m, &p, &["t_start", "t_end", "pulse_multiple", "samples"]);
    let t_start = c.opt_f64(m, &p, "t_start", 0.0);
    let samples = c.opt_u64(m, &p, "samples", 201) as usize;
    if samples < 2 {
        c.err(&join(&p, "samples"), "need at least 2 samples");
    }
    if t_start < 0.0 {
        c.err(&join(&p, "t_start"), "must be non-negative");
    }
    let end = match (m.get("t_end"), m.get("pulse_multiple")) {
        (Some(_), Some(_)) => {
            c.err(&p, "give either t_end or pulse_multiple, not both");
            None
        }
        (None, None) => {
            c.err(&join(&p, "t_end"), "missing required field (or give pulse_multiple)");
            None
        }
        (Some(t), None) => {
            let t1 = c.number(t, &join(&p, "t_end"))?;
            if t1 <= t_start {
                c.err(&join(&p, "t_end"), "must exceed t_start");
                None
            } else {
                Some(EndTime::Fixed(t1))
            }
        }
        (None, Some(k)) => {
            let k = c.number(k, &join(&p, "pulse_multiple"))?;
            if k <= 0.0 {
                c.err(&join(&p, "pulse_multiple"), "must be positive");
                None
            } else {
                Some(EndTime::PulseMultiple(k))
            }
        }
    };
    Some(TimeSpec {
        t_start,
        end: end?,
        samples,
    })
}

fn parse_run(c: &mut Checker, value: &Value, path: &str) -> Option<RunConfig> {
    let top = c.object(value, path_or_root(path))?;
    c.allow_keys(top, path, &TOP_KEYS);

    let backend = match top.get("backend") {
        Some(Value::String(s)) => match Backend::from_name(s) {
            Some(b) => Some(b),
            None => {
                c.err(
                    &join(path, "backend"),
                    format!("unknown backend {s:?} (expected meanfield, cumulant2, master or trajectories)"),
                );
                None
            }
        },
        Some(_) => {
            c.err(&join(path, "backend"), "expected a string");
            None
        }
        None => {
            c.err(&join(path, "backend"), "missing required field");
            None
        }
    };
    let model = parse_model(c, top, path);
    let n_atoms = match &model {
        Some(m) => Some(m.n_atoms()),
        None => top
            .get("params")
            .or_else(|| top.get("schedule"))
            .and_then(|v| v.get("n_atoms"))
            .and_then(Value::as_u64)
            .map(|n| n as usize),
    };
    let initial = parse_initial(c, top.get("initial"), path, n_atoms);
    let time = parse_time(c, top.get("time"), path);

    let mut observables = Vec::new();
    let op = join(path, "observables");
    match top.get("observables") {
        None => observables.push(Observable::Moments),
        Some(Value::Array(items)) => {
            for (i, x) in items.iter().enumerate() {
                match x.as_str().and_then(Observable::from_name) {
                    Some(o) => observables.push(o),
                    None => c.err(
                        &format!("{op}[{i}]"),
                        format!("unknown observable {x} (expected moments, chi2, c2, c3, cn or qfunction)"),
                    ),
                }
            }
        }
        Some(_) => c.err(&op, "expected an array of names"),
    }
    observables.sort();
    observables.dedup();
    if let Some(b) = backend {
        for o in &observables {
            if !b.supports(*o) {
                let needs = match o {
                    Observable::C3 | Observable::Cn => "the master backend",
                    Observable::QFunction => "the master or trajectories backend",
                    _ => "a backend with fluctuations (cumulant2, master or trajectories)",
                };
                c.err(&op, format!("observable {} is not available with backend {b}; it needs {needs}", o.name()));
            }
        }
    }

    let cn_order = c.opt_u64(top, path, "cn_order", 3) as usize;
    if !(2..=4).contains(&cn_order) {
        c.err(&join(path, "cn_order"), "must be 2, 3 or 4");
    }

    let qp = join(path, "qfunction");
    let qfunction = match (top.get("qfunction"), observables.contains(&Observable::QFunction)) {
        (Some(_), false) => {
            c.err(&qp, "given but qfunction is not in the observables list");
            None
        }
        (None, true) => {
            c.err(&join(&qp, "times"), "missing required field (snapshot times)");
            None
        }
        (None, false) => None,
        (Some(v), true) => c.object(v, &qp).and_then(|m| {
            c.allow_keys(m, &qp, &["times", "n_theta", "n_phi"]);
            let times = match m.get("times") {
                Some(t) => c.f64_list(t, &join(&qp, "times")),
                None => {
                    c.err(&join(&qp, "times"), "missing required field");
                    None
                }
            };
            let (dt, dp) = default_resolution(n_atoms.unwrap_or(1));
            let n_theta = c.opt_u64(m, &qp, "n_theta", dt as u64) as usize;
            let n_phi = c.opt_u64(m, &qp, "n_phi", dp as u64) as usize;
            if n_theta < 8 || n_phi < 8 {
                c.err(&qp, "grid must be at least 8 x 8");
            }
            let mut times = times?;
            if times.is_empty() {
                c.err(&join(&qp, "times"), "need at least one time");
            }
            times.sort_by(f64::total_cmp);
            times.dedup();
            Some(QFunctionSpec { times, n_theta, n_phi })
        }),
    };

    let outp = join(path, "output");
    let output = match top.get("output") {
        None => Some(OutputSpec {
            dir: None,
            prefix: "run".into(),
        }),
        Some(v) => c.object(v, &outp).map(|m| {
            c.allow_keys(m, &outp, &["dir", "prefix"]);
            let dir = match m.get("dir") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => {
                    c.err(&join(&outp, "dir"), "expected a string");
                    None
                }
            };
            let prefix = match m.get("prefix") {
                None | Some(Value::Null) => "run".to_string(),
                Some(Value::String(s)) if !s.is_empty() && !s.contains(['/', '\\']) => s.clone(),
                Some(_) => {
                    c.err(&join(&outp, "prefix"), "expected a nonempty file-name prefix");
                    "run".to_string()
                }
            };
            OutputSpec { dir, prefix }
        }),
    };

    let seed = c.opt_u64(top, path, "seed", 0);

    let tp = join(path, "tolerances");
    let default_tol = backend.map_or(1e-8, Backend::default_tol);
    let tolerances = match top.get("tolerances") {
        None => Some(Tolerances {
            ode: default_tol,
            trace_abort: crate::lindblad::DEFAULT_TRACE_ABORT,
            check_positivity: false,
        }),
        Some(v) => c.object(v, &tp).map(|m| {
            c.allow_keys(m, &tp, &["ode", "trace_abort", "check_positivity"]);
            let ode = c.opt_f64(m, &tp, "ode", default_tol);
            if !(ode > 0.0 && ode <= 1e-2) {
                c.err(&join(&tp, "ode"), "must lie in (0, 1e-2]");
            }
            let trace_abort = c.opt_f64(m, &tp, "trace_abort", crate::lindblad::DEFAULT_TRACE_ABORT);
            if trace_abort <= 0.0 {
                c.err(&join(&tp, "trace_abort"), "must be positive");
            }
            let check_positivity = c.opt_bool(m, &tp, "check_positivity", false);
            Tolerances {
                ode,
                trace_abort,
                check_positivity,
            }
        }),
    };

    let trp = join(path, "trajectories");
    let trajectories = match (top.get("trajectories"), backend) {
        (Some(_), Some(b)) if b != Backend::Trajectories => {
            c.err(&trp, format!("only used with the trajectories backend, not {b}"));
            None
        }
        (None, Some(Backend::Trajectories)) => Some(TrajectorySpec::default()),
        (Some(v), _) => c.object(v, &trp).map(|m| {
            c.allow_keys(m, &trp, &["n_trajectories", "dt_max", "jump_tolerance", "write_individual"]);
            let d = TrajectorySpec::default();
            let spec = TrajectorySpec {
                n_trajectories: c.opt_u64(m, &trp, "n_trajectories", d.n_trajectories as u64) as usize,
                dt_max: c.opt_f64(m, &trp, "dt_max", d.dt_max),
                jump_tolerance: c.opt_f64(m, &trp, "jump_tolerance", d.jump_tolerance),
                write_individual: c.opt_bool(m, &trp, "write_individual", d.write_individual),
            };
            if spec.n_trajectories == 0 {
                c.err(&join(&trp, "n_trajectories"), "must be at least 1");
            }
            if spec.dt_max <= 0.0 {
                c.err(&join(&trp, "dt_max"), "must be positive");
            }
            if !(spec.jump_tolerance > 0.0 && spec.jump_tolerance < 1.0) {
                c.err(&join(&trp, "jump_tolerance"), "must lie in (0, 1)");
            }
            spec
        }),
        _ => None,
    };

    let cfg = RunConfig {
        backend: backend?,
        model: model?,
        initial: initial?,
        time: time?,
        observables,
        cn_order,
        qfunction,
        output: output?,
        seed,
        tolerances: tolerances?,
        trajectories,
    };
    // checks that need the assembled config
    match cfg.t_span() {
        Ok((t0, t1)) => {
            if let Some(q) = &cfg.qfunction {
                for &t in &q.times {
                    if t < t0 || t > t1 {
                        c.err(&join(&qp, "times"), format!("snapshot time {t} outside [{t0}, {t1}]"));
                    }
                }
            }
        }
        Err(Error::Config(msgs)) => c.errors.extend(msgs.into_iter().map(|m| join(path, &m))),
        Err(e) => c.err(&join(path, "initial"), e),
    }
    Some(cfg)
}
