//! Model specification files (TOML).
//!
//! A generic model declares its dimension, named parameters, intermediate
//! `let` bindings, jumps with rate expressions, and the state domain:
//!
//! ```toml
//! schema_version = 1
//! name = "erlang-a"
//! dimension = 1
//!
//! [params]
//! mu = 1.0
//! theta = 0.5
//!
//! [[let]]
//! name = "N"
//! value = "round(n)"
//!
//! [[jump]]
//! name = "arrival"
//! vector = [1]
//! rate = "n"
//!
//! [[jump]]
//! name = "departure"
//! vector = [-1]
//! rate = "mu*min(x1, N) + theta*pos(x1 - N)"
//!
//! [domain]
//! lower = [0]
//! upper = ["inf"]
//! ```
//!
//! Rate expressions see `n`, the parameters, `x1..xd` and the lets (each let
//! sees the ones before it). Domain bounds and the optional `[fluid]` center
//! and guess are expressions in `n`, the parameters and state-free lets.
//! `[domain] constraints` are expressions that must be ≥ 0 at every lattice
//! state of E^n.
//!
//! Zoo models are addressed by name plus parameters instead:
//!
//! ```toml
//! schema_version = 1
//! [zoo]
//! model = "erlang-a"
//! mu = 1.0
//! theta = 0.5
//! staffing = { rule = "scaled", load = 1.0, beta = 0.0 }
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chain::{scale_chain, ChainFamily, Jump, ScaledChain, StateDomain};
use crate::error::{Error, Result};
use crate::expr::{is_builtin, is_identifier, Expr, Scope};
use crate::fluid::{stationary_point, FluidModel};
use crate::zoo::{build_erlang_a, build_mphn, mphn_center, ErlangAParams, PhaseTypeParams};

const MAX_DIM: usize = 16;
const MAX_SLOTS: usize = 256;
const MAX_JUMPS: usize = 1024;
const MAX_JUMP_ENTRY: i64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ZooSpec {
    ErlangA(ErlangAParams),
    Mphn(PhaseTypeParams),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Value {
    Num(f64),
    Expr(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLet {
    name: String,
    value: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJump {
    name: String,
    vector: Vec<i64>,
    rate: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    lower: Option<Vec<Value>>,
    upper: Option<Vec<Value>>,
    #[serde(default)]
    constraints: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFluid {
    center: Option<Vec<Value>>,
    guess: Option<Vec<Value>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    schema_version: u32,
    name: Option<String>,
    dimension: Option<usize>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    #[serde(default, rename = "let")]
    lets: Vec<RawLet>,
    #[serde(default, rename = "jump")]
    jumps: Vec<RawJump>,
    domain: Option<RawDomain>,
    fluid: Option<RawFluid>,
    zoo: Option<ZooSpec>,
}

/// Compiled expressions of a generic model; slots are
/// `[n, params.., x1..xd, lets..]`.
#[derive(Debug)]
struct Compiled {
    dim: usize,
    params: Vec<f64>,
    lets: Vec<Expr>,
    rates: Vec<Expr>,
    lower: Vec<Expr>,
    upper: Vec<Expr>,
    constraints: Vec<Expr>,
    center: Option<Vec<Expr>>,
    guess: Option<Vec<Expr>>,
}

impl Compiled {
    fn x_slot(&self) -> usize {
        1 + self.params.len()
    }

    fn let_slot(&self) -> usize {
        self.x_slot() + self.dim
    }

    fn slots(&self) -> usize {
        self.let_slot() + self.lets.len()
    }

    /// Fills `env` for state `x` (NaN state for state-free evaluation).
    fn fill(&self, n: f64, x: Option<&[f64]>, env: &mut [f64]) {
        env[0] = n;
        env[1..self.x_slot()].copy_from_slice(&self.params);
        for k in 0..self.dim {
            env[self.x_slot() + k] = x.map_or(f64::NAN, |x| x[k]);
        }
        for (j, e) in self.lets.iter().enumerate() {
            env[self.let_slot() + j] = e.eval(env);
        }
    }

    fn static_values(&self, n: f64, exprs: &[Expr]) -> Vec<f64> {
        let mut env = vec![0.0; self.slots()];
        self.fill(n, None, &mut env);
        exprs.iter().map(|e| e.eval(&env)).collect()
    }
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    Generic,
    Zoo(ZooSpec),
}

/// A parsed model: the chain family plus how to find its center.
#[derive(Clone)]
pub struct Model {
    pub name: String,
    pub chain: Arc<ChainFamily>,
    pub kind: ModelKind,
    compiled: Option<Arc<Compiled>>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("name", &self.name)
            .field("chain", &self.chain)
            .field("kind", &self.kind)
            .finish()
    }
}

impl Model {
    pub fn from_zoo(spec: ZooSpec) -> Result<Self> {
        let (name, chain) = match &spec {
            ZooSpec::ErlangA(p) => ("erlang-a".to_string(), build_erlang_a(p)?),
            ZooSpec::Mphn(p) => (format!("mphn-{}", p.phases()), build_mphn(p)?),
        };
        Ok(Self {
            name,
            chain: Arc::new(chain),
            kind: ModelKind::Zoo(spec),
            compiled: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.chain.dim()
    }

    /// Fluid stationary point x̄^n_∞: closed form for zoo models, the
    /// declared `[fluid] center` if any, else a Newton solve from the guess.
    pub fn center(&self, n: f64) -> Result<Vec<f64>> {
        match (&self.kind, &self.compiled) {
            (ModelKind::Zoo(ZooSpec::ErlangA(p)), _) => Ok(vec![p.center(n)]),
            (ModelKind::Zoo(ZooSpec::Mphn(p)), _) => mphn_center(p, n),
            (ModelKind::Generic, Some(c)) => {
                if let Some(center) = &c.center {
                    let v = c.static_values(n, center);
                    return finite(v, "fluid center");
                }
                let guess = match &c.guess {
                    Some(g) => finite(c.static_values(n, g), "fluid guess")?,
                    None => {
                        let lo = c.static_values(n, &c.lower);
                        lo.iter().map(|l| if l.is_finite() { l.max(0.0) } else { 0.0 }).collect()
                    }
                };
                let fm = FluidModel::from_chain(self.chain.clone(), n);
                Ok(stationary_point(&fm, &guess)?.point)
            }
            (ModelKind::Generic, None) => Err(Error::Model("generic model without compiled rates".into())),
        }
    }

    pub fn scaled(&self, n: f64) -> Result<ScaledChain> {
        scale_chain(self.chain.clone(), n, self.center(n)?)
    }

    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.name,
            "dimension": self.dim(),
            "jumps": self.chain.jumps().iter().map(|j| serde_json::json!({"name": j.name, "vector": j.vector})).collect::<Vec<_>>(),
            "jump_bound": self.chain.jump_bound(),
            "kind": match &self.kind {
                ModelKind::Generic => serde_json::json!("generic"),
                ModelKind::Zoo(z) => serde_json::to_value(z).unwrap_or(serde_json::Value::Null),
            },
        })
    }
}

fn finite(v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Model(format!("{what} evaluates to {v:?}")))
    }
}

/// Parses a model specification file.
pub fn parse_model_spec(src: &str) -> Result<Model> {
    let raw: RawSpec = toml::from_str(src).map_err(|e| Error::Model(e.to_string()))?;
    if raw.schema_version != crate::SCHEMA_VERSION {
        return Err(Error::Model(format!(
            "unsupported schema_version {} (expected {})",
            raw.schema_version,
            crate::SCHEMA_VERSION
        )));
    }
    if let Some(zoo) = raw.zoo {
        if raw.dimension.is_some() || !raw.jumps.is_empty() || !raw.params.is_empty() || !raw.lets.is_empty() || raw.domain.is_some() || raw.fluid.is_some() {
            return Err(Error::Model("a [zoo] model cannot also declare jumps, params, lets, domain or fluid".into()));
        }
        let mut m = Model::from_zoo(zoo)?;
        if let Some(name) = raw.name {
            m.name = name;
        }
        return Ok(m);
    }
    let dim = raw
        .dimension
        .ok_or_else(|| Error::Model("missing `dimension` (or a [zoo] table)".into()))?;
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Model(format!("dimension must be in 1..={MAX_DIM}, got {dim}")));
    }
    if raw.jumps.is_empty() || raw.jumps.len() > MAX_JUMPS {
        return Err(Error::Model(format!("between 1 and {MAX_JUMPS} jumps are required")));
    }
    if 1 + raw.params.len() + dim + raw.lets.len() > MAX_SLOTS {
        return Err(Error::Model(format!("more than {MAX_SLOTS} named values")));
    }
    let mut scope = Scope::new();
    scope.push("n");
    let reserved = |name: &str, scope: &Scope| -> Result<()> {
        let is_state = name.strip_prefix('x').is_some_and(|d| d.is_empty() || d.bytes().all(|b| b.is_ascii_digit()));
        if !is_identifier(name) || is_builtin(name) || is_state || scope.slot(name).is_some() {
            return Err(Error::Model(format!("`{name}` is not available as a name")));
        }
        Ok(())
    };
    let mut params = Vec::new();
    for (k, v) in &raw.params {
        reserved(k, &scope)?;
        if !v.is_finite() {
            return Err(Error::Model(format!("parameter `{k}` is not finite")));
        }
        scope.push(k.clone());
        params.push(*v);
    }
    for k in 1..=dim {
        scope.push(format!("x{k}"));
    }
    let x_slots = 1 + params.len()..1 + params.len() + dim;
    // lets depending on the state, directly or through earlier lets
    let mut state_dependent = vec![false; MAX_SLOTS];
    for s in x_slots.clone() {
        state_dependent[s] = true;
    }
    let mut lets = Vec::new();
    for l in &raw.lets {
        let e = Expr::compile(&l.value, &scope).map_err(|e| context(e, &format!("let `{}`", l.name)))?;
        reserved(&l.name, &scope)?;
        let dep = e.slots().iter().any(|&s| state_dependent[s]);
        let slot = scope.push(l.name.clone());
        state_dependent[slot] = dep;
        lets.push(e);
    }
    let compile_static = |src: &str, what: &str| -> Result<Expr> {
        let e = Expr::compile(src, &scope).map_err(|e| context(e, what))?;
        if e.slots().iter().any(|&s| state_dependent[s]) {
            return Err(Error::Model(format!("{what} must not depend on the state")));
        }
        Ok(e)
    };
    let values = |v: &Option<Vec<Value>>, what: &str, default: f64| -> Result<Vec<Expr>> {
        match v {
            None => (0..dim).map(|_| Expr::compile(&num_literal(default), &scope)).collect(),
            Some(list) => {
                if list.len() != dim {
                    return Err(Error::Model(format!("{what} has {} entries, expected {dim}", list.len())));
                }
                list.iter()
                    .map(|v| match v {
                        Value::Num(x) => Expr::compile(&num_literal(*x), &scope),
                        Value::Expr(s) => compile_static(s, what),
                    })
                    .collect()
            }
        }
    };
    let mut names = std::collections::HashSet::new();
    let mut jumps = Vec::new();
    let mut rates = Vec::new();
    for j in &raw.jumps {
        if !names.insert(j.name.clone()) {
            return Err(Error::Model(format!("duplicate jump name `{}`", j.name)));
        }
        if j.vector.len() != dim {
            return Err(Error::Model(format!("jump `{}` has length {}, expected {dim}", j.name, j.vector.len())));
        }
        if j.vector.iter().any(|v| v.abs() > MAX_JUMP_ENTRY) {
            return Err(Error::Model(format!("jump `{}` has an entry beyond ±{MAX_JUMP_ENTRY}", j.name)));
        }
        jumps.push(Jump::new(j.name.clone(), j.vector.clone()));
        rates.push(Expr::compile(&j.rate, &scope).map_err(|e| context(e, &format!("rate of `{}`", j.name)))?);
    }
    let dom = raw.domain.unwrap_or_default();
    let fluid = raw.fluid.unwrap_or_default();
    let compiled = Compiled {
        dim,
        params,
        lets,
        rates,
        lower: values(&dom.lower, "domain lower bound", f64::NEG_INFINITY)?,
        upper: values(&dom.upper, "domain upper bound", f64::INFINITY)?,
        constraints: dom
            .constraints
            .iter()
            .map(|c| Expr::compile(c, &scope).map_err(|e| context(e, "domain constraint")))
            .collect::<Result<_>>()?,
        center: fluid.center.as_ref().map(|_| values(&fluid.center, "fluid center", 0.0)).transpose()?,
        guess: fluid.guess.as_ref().map(|_| values(&fluid.guess, "fluid guess", 0.0)).transpose()?,
    };
    let compiled = Arc::new(compiled);
    let rc = compiled.clone();
    let rate = move |n: f64, x: &[f64], out: &mut [f64]| {
        let mut env = [0.0; MAX_SLOTS];
        let env = &mut env[..rc.slots()];
        rc.fill(n, Some(x), env);
        for (o, e) in out.iter_mut().zip(&rc.rates) {
            *o = e.eval(env);
        }
    };
    let dc = compiled.clone();
    let domain = move |n: f64| {
        let lower = dc.static_values(n, &dc.lower);
        let upper = dc.static_values(n, &dc.upper);
        let d = StateDomain::new(lower, upper);
        if dc.constraints.is_empty() {
            return d;
        }
        let cc = dc.clone();
        d.with_predicate(Arc::new(move |x: &[i64]| {
            let mut env = [0.0; MAX_SLOTS];
            let env = &mut env[..cc.slots()];
            let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            cc.fill(n, Some(&xf), env);
            cc.constraints.iter().all(|e| e.eval(env) >= 0.0)
        }))
    };
    let name = raw.name.unwrap_or_else(|| "model".into());
    let chain = ChainFamily::new(name.clone(), dim, jumps, Arc::new(rate), Arc::new(domain))?;
    Ok(Model {
        name,
        chain: Arc::new(chain),
        kind: ModelKind::Generic,
        compiled: Some(compiled),
    })
}

fn num_literal(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else if x.is_nan() {
        "0/0".into()
    } else {
        format!("({x:e})")
    }
}

fn context(e: Error, what: &str) -> Error {
    match e {
        Error::Parse { pos, msg } => Error::Parse {
            pos,
            msg: format!("{what}: {msg}"),
        },
        other => other,
    }
}

/// Parses a zoo address `name[:key=value,...]`:
///
/// * `erlang-a:mu=1,theta=0.5[,load=1][,beta=0]` or with `servers=N` for
///   constant staffing
/// * `mphn:nu=2/2,routing=0/1/0/0,theta=0.5[,beta=0]` with `/`-separated
///   lists and the routing matrix row-major
pub fn parse_zoo_address(src: &str) -> Result<Model> {
    let bad = |msg: String| Error::Model(format!("zoo address `{src}`: {msg}"));
    let (name, rest) = src.split_once(':').unwrap_or((src, ""));
    let mut kv = BTreeMap::new();
    for item in rest.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| bad(format!("`{item}` is not key=value")))?;
        if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(bad(format!("duplicate key `{}`", k.trim())));
        }
    }
    let mut take = |k: &str| kv.remove(k);
    let num = |k: &str, v: Option<String>| -> Result<Option<f64>> {
        v.map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(format!("`{k}` = `{s}` is not a finite number")))
        })
        .transpose()
    };
    let list = |k: &str, v: Option<String>| -> Result<Option<Vec<f64>>> {
        v.map(|s| {
            s.split('/')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| bad(format!("`{k}` entry `{t}` is not a finite number")))
                })
                .collect()
        })
        .transpose()
    };
    let need = |k: &str, v: Option<f64>| v.ok_or_else(|| bad(format!("missing `{k}`")));
    let spec = match name.trim() {
        "erlang-a" => {
            let mu = need("mu", num("mu", take("mu"))?)?;
            let theta = need("theta", num("theta", take("theta"))?)?;
            let servers = num("servers", take("servers"))?;
            let load = num("load", take("load"))?;
            let beta = num("beta", take("beta"))?;
            let staffing = match (servers, load, beta) {
                (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                    return Err(bad("`servers` excludes `load` and `beta`".into()))
                }
                (Some(servers), None, None) => crate::zoo::Staffing::Constant { servers },
                (None, load, beta) => crate::zoo::Staffing::Scaled {
                    load: load.unwrap_or(1.0),
                    beta: beta.unwrap_or(0.0),
                },
            };
            ZooSpec::ErlangA(ErlangAParams { mu, theta, staffing })
        }
        "mphn" => {
            let nu = list("nu", take("nu"))?.ok_or_else(|| bad("missing `nu`".into()))?;
            let flat = list("routing", take("routing"))?.ok_or_else(|| bad("missing `routing`".into()))?;
            let theta = need("theta", num("theta", take("theta"))?)?;
            let beta = num("beta", take("beta"))?.unwrap_or(0.0);
            let i = nu.len();
            if i == 0 || flat.len() != i * i {
                return Err(bad(format!("routing needs {} entries for {i} phases, got {}", i * i, flat.len())));
            }
            let routing = flat.chunks(i).map(|r| r.to_vec()).collect();
            ZooSpec::Mphn(PhaseTypeParams { nu, routing, theta, beta })
        }
        other => return Err(bad(format!("unknown zoo model `{other}` (expected erlang-a or mphn)"))),
    };
    if let Some(k) = kv.keys().next() {
        return Err(bad(format!("unknown key `{k}`")));
    }
    Model::from_zoo(spec)
}

/// A scalar test function of the scaled state, written in the expression
/// language over `x1..xd` (and `x` when d = 1).
#[derive(Debug, Clone)]
pub struct TestFunction {
    expr: Expr,
    dim: usize,
}

impl TestFunction {
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Config(format!("dimension must be in 1..={MAX_DIM}")));
        }
        let mut scope = Scope::new();
        for k in 1..=dim {
            scope.push(format!("x{k}"));
        }
        let mut expr = Expr::compile(src, &scope);
        if dim == 1 && expr.is_err() {
            let mut alias = Scope::new();
            alias.push("x");
            if let Ok(e) = Expr::compile(src, &alias) {
                expr = Ok(e);
            }
        }
        Ok(Self { expr: expr?, dim })
    }

    pub fn source(&self) -> &str {
        self.expr.source()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.expr.eval(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ERLANG: &str = r#"
schema_version = 1
name = "erlang-a"
dimension = 1

[params]
mu = 1.0
theta = 0.5

[[let]]
name = "N"
value = "round(n)"

[[jump]]
name = "arrival"
vector = [1]
rate = "n"

[[jump]]
name = "departure"
vector = [-1]
rate = "mu*min(x1, N) + theta*pos(x1 - N)"

[domain]
lower = [0]
upper = ["inf"]
"#;

    #[test]
    fn generic_matches_zoo() {
        let m = parse_model_spec(ERLANG).unwrap();
        let z = Model::from_zoo(ZooSpec::ErlangA(ErlangAParams {
            mu: 1.0,
            theta: 0.5,
            staffing: crate::zoo::Staffing::Scaled { load: 1.0, beta: 0.0 },
        }))
        .unwrap();
        for x in [0.0, 50.0, 99.0, 100.0, 130.5] {
            assert_eq!(m.chain.rates(100.0, &[x]), z.chain.rates(100.0, &[x]));
        }
        let c = m.center(100.0).unwrap();
        assert!((c[0] - 100.0).abs() < 1e-8);
        let dom = m.chain.domain(100.0);
        assert_eq!(dom.lower, vec![0.0]);
        assert_eq!(dom.upper, vec![f64::INFINITY]);
    }

    #[test]
    fn zoo_table() {
        let m = parse_model_spec(
            r#"
schema_version = 1
[zoo]
model = "mphn"
nu = [2.0, 2.0]
routing = [[0.0, 1.0], [0.0, 0.0]]
theta = 0.5
"#,
        )
        .unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.center(100.0).unwrap(), vec![50.0, 50.0]);
    }

    #[test]
    fn rejects_bad_specs() {
        for (src, needle) in [
            ("schema_version = 2\ndimension = 1", "schema_version"),
            ("schema_version = 1", "dimension"),
            ("schema_version = 1\ndimension = 1\n[[jump]]\nname = \"a\"\nvector = [1, 0]\nrate = \"n\"", "length"),
            ("schema_version = 1\ndimension = 1\n[params]\nx1 = 1.0\n[[jump]]\nname = \"a\"\nvector = [1]\nrate = \"n\"", "not available"),
            ("schema_version = 1\ndimension = 1\n[[jump]]\nname = \"a\"\nvector = [1]\nrate = \"q\"", "unknown identifier"),
            ("schema_version = 1\ndimension = 1\n[[jump]]\nname = \"a\"\nvector = [1]\nrate = \"n\"\n[domain]\nupper = [\"x1\"]", "state"),
            ("schema_version = 1\ndimension = 1\nbogus = 3", "unknown field"),
        ] {
            let e = parse_model_spec(src).unwrap_err().to_string();
            assert!(e.contains(needle), "{src}: {e}");
        }
    }

    #[test]
    fn constraints_thin_the_lattice() {
        let m = parse_model_spec(
            r#"
schema_version = 1
dimension = 2
[[jump]]
name = "a"
vector = [1, 0]
rate = "n"
[domain]
lower = [0, 0]
upper = ["n", "n"]
constraints = ["n - x1 - x2"]
"#,
        )
        .unwrap();
        let d = m.chain.domain(10.0);
        assert!(d.contains(&[4, 6]));
        assert!(!d.contains(&[5, 6]));
    }

    #[test]
    fn zoo_addresses() {
        let m = parse_zoo_address("erlang-a:mu=1,theta=0.5").unwrap();
        assert_eq!(m.center(100.0).unwrap(), vec![100.0]);
        let m = parse_zoo_address("erlang-a:mu=1,theta=0.5,servers=90").unwrap();
        assert!((m.center(100.0).unwrap()[0] - 110.0).abs() < 1e-12);
        let m = parse_zoo_address("mphn:nu=2/2,routing=0/1/0/0,theta=0.5").unwrap();
        assert_eq!(m.dim(), 2);
        for bad in ["erlang-a", "erlang-a:mu=1", "erlang-a:mu=1,theta=x", "mphn:nu=2,routing=0/1,theta=1", "queue:a=1", "erlang-a:mu=1,theta=1,zz=2", "erlang-a:mu=1,mu=2,theta=1"] {
            assert!(parse_zoo_address(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn test_functions() {
        let f = TestFunction::parse("x^3", 1).unwrap();
        assert_eq!(f.eval(&[2.0]), 8.0);
        let g = TestFunction::parse("x1^2 + x2^2", 2).unwrap();
        assert_eq!(g.eval(&[3.0, 4.0]), 25.0);
        assert!(TestFunction::parse("x", 2).is_err());
    }
}
