//! Python bindings for `cisa-core`.

use pyo3::prelude::*;

#[pymodule]
mod cisa_py {
    use std::collections::BTreeMap;
    use std::path::PathBuf;

    use cisa_core::experiment::ExperimentSpec;
    use cisa_core::{self as core, DgpKind, DiKind, EnvConfig, LossKind, Method, Optimizer, TrainConfig, TransformSet};
    use pyo3::exceptions::PyValueError;
    use pyo3::prelude::*;

    fn err(e: core::Error) -> PyErr {
        PyValueError::new_err(e.to_string())
    }

    fn parse<T: std::str::FromStr<Err = core::Error>>(s: &str) -> PyResult<T> {
        s.parse().map_err(err)
    }

    /// Exact joint law of ±1 variables. The first variable is the most
    /// significant bit; +1 comes before −1.
    #[pyclass(frozen, skip_from_py_object, name = "Joint")]
    #[derive(Clone)]
    struct Joint(core::DiscreteJoint);

    #[pymethods]
    impl Joint {
        #[new]
        fn new(vars: Vec<String>, probs: Vec<f64>) -> PyResult<Self> {
            core::DiscreteJoint::new(vars, probs).map(Joint).map_err(err)
        }

        #[getter]
        fn vars(&self) -> Vec<String> {
            self.0.vars().to_vec()
        }

        #[getter]
        fn probs(&self) -> Vec<f64> {
            self.0.probs().to_vec()
        }

        /// Probability of an event given as `{name: value}`.
        fn prob(&self, event: BTreeMap<String, i8>) -> PyResult<f64> {
            let ev: Vec<(&str, i8)> = event.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            self.0.prob(&ev).map_err(err)
        }

        fn marginal(&self, vars: Vec<String>) -> PyResult<Joint> {
            let v: Vec<&str> = vars.iter().map(String::as_str).collect();
            self.0.marginal(&v).map(Joint).map_err(err)
        }

        fn reweighted(&self, p0: [f64; 2]) -> PyResult<Joint> {
            core::reweighted_joint(&self.0, p0).map(Joint).map_err(err)
        }

        /// Draws `n` rows; each row lists values in `vars` order.
        fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<Vec<i8>>> {
            self.0.sample(n, seed).map(|d| d.rows).map_err(err)
        }

        fn to_csv(&self) -> String {
            self.0.to_csv()
        }

        fn __repr__(&self) -> String {
            format!("Joint(vars={:?}, probs={:?})", self.0.vars(), self.0.probs())
        }
    }

    /// Training and test environments of one generator.
    #[pyclass(frozen, name = "Environments")]
    struct Environments(core::EnvironmentSet);

    #[pymethods]
    impl Environments {
        #[new]
        #[pyo3(signature = (dgp = "anticausal", alpha = None, beta = None, gamma = None, beta_test = None, gamma_test = None))]
        fn new(
            dgp: &str,
            alpha: Option<f64>,
            beta: Option<Vec<f64>>,
            gamma: Option<Vec<f64>>,
            beta_test: Option<f64>,
            gamma_test: Option<f64>,
        ) -> PyResult<Self> {
            let mut cfg = EnvConfig::with_dgp(parse::<DgpKind>(dgp)?);
            cfg.alpha = alpha.unwrap_or(cfg.alpha);
            cfg.beta = beta.unwrap_or(cfg.beta);
            cfg.gamma = gamma.unwrap_or(cfg.gamma);
            cfg.beta_test = beta_test.unwrap_or(cfg.beta_test);
            cfg.gamma_test = gamma_test.unwrap_or(cfg.gamma_test);
            cfg.build().map(Environments).map_err(err)
        }

        #[getter]
        fn subtype(&self) -> &'static str {
            self.0.subtype.label()
        }

        #[getter]
        fn train(&self) -> Vec<Joint> {
            self.0.train.iter().cloned().map(Joint).collect()
        }

        #[getter]
        fn test(&self) -> Joint {
            Joint(self.0.test.clone())
        }

        fn purely_spurious(&self) -> PyResult<bool> {
            core::check_purely_spurious(&self.0).map_err(err)
        }

        /// Deviation of each invariance kind for φ = X1.
        fn signature(&self) -> PyResult<BTreeMap<&'static str, f64>> {
            let sig = core::ci_signature(&self.0).map_err(err)?;
            Ok(DiKind::ALL.iter().map(|&k| (k.name(), sig.deviation(k))).collect())
        }
    }

    /// Score table over the cells (+,+), (+,−), (−,+), (−,−) of (x1, x2).
    #[pyclass(frozen, name = "Predictor")]
    struct Predictor(core::TabularPredictor);

    #[pymethods]
    impl Predictor {
        #[new]
        fn new(scores: [f64; 4]) -> PyResult<Self> {
            core::TabularPredictor::new(scores).map(Predictor).map_err(err)
        }

        #[getter]
        fn scores(&self) -> [f64; 4] {
            self.0.scores()
        }

        fn predict(&self, x1: i8, x2: i8) -> i8 {
            self.0.predict(x1, x2)
        }

        fn accuracy(&self, joint: &Joint) -> PyResult<f64> {
            self.0.accuracy(&joint.0).map_err(err)
        }

        #[pyo3(signature = (joint, loss = "logistic"))]
        fn risk(&self, joint: &Joint, loss: &str) -> PyResult<f64> {
            self.0.risk(&joint.0, parse::<LossKind>(loss)?, None).map_err(err)
        }

        #[pyo3(signature = (joint, loss = "logistic"))]
        fn irmv1_penalty(&self, joint: &Joint, loss: &str) -> PyResult<f64> {
            core::irmv1_penalty(&self.0, &joint.0, parse::<LossKind>(loss)?).map_err(err)
        }

        #[pyo3(signature = (envs, tol = 0.1))]
        fn cf_invariant(&self, envs: &Environments, tol: f64) -> PyResult<bool> {
            core::cf_invariant(&self.0, &envs.0, tol).map_err(err)
        }

        fn is_trivial(&self) -> bool {
            self.0.is_trivial()
        }

        fn __repr__(&self) -> String {
            format!("Predictor({})", self.0)
        }
    }

    /// Fits one method on the training environments and returns the
    /// predictor with its iteration count and final gradient norm.
    #[pyfunction]
    #[pyo3(signature = (
        envs, method = "girmv1", loss = "logistic", optimizer = "newton", penalty_weight = 1e4,
        transforms = vec!["identity".to_string(), "flip_x2".to_string()], transform_dist = None
    ))]
    fn train(
        envs: &Environments,
        method: &str,
        loss: &str,
        optimizer: &str,
        penalty_weight: f64,
        transforms: Vec<String>,
        transform_dist: Option<Vec<f64>>,
    ) -> PyResult<(Predictor, usize, f64)> {
        let cfg = TrainConfig {
            loss: parse(loss)?,
            optimizer: parse::<Optimizer>(optimizer)?,
            penalty_weight,
            ..TrainConfig::default()
        };
        let envs = &envs.0.train;
        let names: Vec<&str> = transforms.iter().map(String::as_str).collect();
        let fit = match parse::<Method>(method)? {
            Method::Erm => core::train_erm(envs, &cfg),
            Method::Irmv1 => core::train_irmv1(envs, &cfg),
            Method::Girmv1 => core::train_girmv1(envs, &cfg),
            Method::Consistency => {
                TransformSet::from_names(&names).and_then(|t| core::train_consistency(envs, &t, &cfg))
            }
            Method::Augmented => TransformSet::from_names(&names).and_then(|t| {
                let dist = transform_dist.unwrap_or_else(|| vec![1.0 / names.len() as f64; names.len()]);
                core::train_augmented_erm(envs, &t, &dist, &cfg)
            }),
        }
        .map_err(err)?;
        Ok((Predictor(fit.predictor), fit.iterations, fit.grad_norm))
    }

    /// Runs an experiment from config text and returns the rendered
    /// artifacts by file name. Writes them to `out_dir` when given.
    #[pyfunction]
    #[pyo3(signature = (config = "", out_dir = None))]
    fn run_experiment(config: &str, out_dir: Option<PathBuf>) -> PyResult<BTreeMap<&'static str, String>> {
        let spec = ExperimentSpec::from_toml(config).map_err(err)?;
        let outcome = core::run_experiment(&spec).map_err(err)?;
        let a = outcome.artifacts;
        if let Some(dir) = out_dir {
            a.write_to(&dir).map_err(err)?;
        }
        Ok(BTreeMap::from([
            (core::Artifacts::PREDICTOR, a.predictor_csv),
            (core::Artifacts::REPORT, a.report_toml),
            (core::Artifacts::SUMMARY, a.summary_csv),
            (core::Artifacts::MANIFEST, a.manifest_toml),
        ]))
    }

    #[pyfunction]
    fn classify_dag(text: &str) -> PyResult<&'static str> {
        let dag = core::CausalDag::parse(text).map_err(err)?;
        Ok(core::classify_cisa(&dag).label())
    }

    /// Every accepted DAG as `(edge text, family label)`.
    #[pyfunction]
    fn enumerate_dags() -> Vec<(String, &'static str)> {
        core::enumerate_cisa_dags()
            .into_iter()
            .map(|(d, s)| (d.to_text(), s.label()))
            .collect()
    }

    #[pyfunction]
    fn audit_theorems() -> PyResult<Vec<(String, bool, String)>> {
        let checks = core::audit_theorems(&core::TheoremAuditSpec::default()).map_err(err)?;
        Ok(checks.into_iter().map(|c| (c.name, c.passed, c.detail)).collect())
    }

    #[pyfunction]
    fn g_of_gamma(gamma: f64, alpha: f64) -> PyResult<f64> {
        core::g_of_gamma(gamma, alpha).map_err(err)
    }
}
