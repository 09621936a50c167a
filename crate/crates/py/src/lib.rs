//! Python bindings over the pure computation core. Documents cross the
//! boundary as JSON strings in the wire encoding.

use chrono::FixedOffset;
use fabric_core::compute::{
    answer_queries, compute_design, normalize_intent, render_answers, summarize, tbp_duration as tbp_secs,
    NormalizeOptions, ServiceIntent,
};
use fabric_core::model::{DomainModel, QosClass, ReservationSegment, TimeInterval, Urn, Verbosity};
use fabric_core::presets::{baseline8, generate, TopologySpec};
use fabric_core::protocol::{decode, encode, IntentDocument};
use fabric_core::topology::{integrate_models, UnionModel};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn text(bytes: Vec<u8>) -> String {
    String::from_utf8(bytes).expect("encoder emits UTF-8")
}

/// Seconds needed to move `tbp_mbytes` megabytes at `mbps`, rounded up.
#[pyfunction]
fn tbp_duration(tbp_mbytes: u64, mbps: u64) -> PyResult<i64> {
    if mbps == 0 {
        return Err(PyValueError::new_err("mbps must be positive"));
    }
    Ok(tbp_secs(tbp_mbytes, mbps))
}

/// Decodes an intent document and re-encodes it canonically.
#[pyfunction]
fn canonical_intent(document: &str) -> PyResult<String> {
    let doc: IntentDocument = decode(document.as_bytes()).map_err(value_error)?;
    Ok(text(encode(&doc)))
}

/// A stitched multi-domain model built from a topology preset.
#[pyclass(module = "fabric_py")]
struct Fabric {
    union: UnionModel,
    next_background: usize,
}

impl Fabric {
    fn intent(&self, document: &str, now: i64, display_offset_secs: i32) -> PyResult<ServiceIntent> {
        let doc: IntentDocument = decode(document.as_bytes()).map_err(value_error)?;
        let display_offset = FixedOffset::east_opt(display_offset_secs)
            .ok_or_else(|| PyValueError::new_err(format!("display offset {display_offset_secs} s out of range")))?;
        let opts = NormalizeOptions { display_offset, ..NormalizeOptions::default() };
        normalize_intent(&doc, now, &opts).map_err(value_error)
    }
}

#[pymethods]
impl Fabric {
    #[new]
    #[pyo3(signature = (preset = "baseline8", seed = 0))]
    fn new(preset: &str, seed: u64) -> PyResult<Fabric> {
        let domains = match preset {
            "baseline8" => baseline8(Verbosity::Full),
            "scaleout67" => generate(&TopologySpec::scaleout67(seed), Verbosity::Full).map_err(value_error)?,
            other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
        };
        let union = integrate_models(domains.into_iter().map(|g| g.model).collect()).map_err(value_error)?;
        Ok(Fabric { union, next_background: 0 })
    }

    #[getter]
    fn domains(&self) -> Vec<String> {
        self.union.models().keys().cloned().collect()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.union.node_count()
    }

    #[getter]
    fn link_count(&self) -> usize {
        self.union.link_count()
    }

    /// Commits `mbps` of guaranteed background traffic on `port` over
    /// `[start, end)`, on the lowest free VLAN. Returns that VLAN.
    fn occupy(&mut self, port: &str, mbps: u64, start: i64, end: i64) -> PyResult<u16> {
        let urn = Urn::parse(port).map_err(value_error)?;
        let interval = TimeInterval::new(start, end).map_err(value_error)?;
        let cal = self.union.calendar(&urn).ok_or_else(|| PyKeyError::new_err(port.to_owned()))?;
        let vlan = *cal
            .available_labels(interval)
            .first()
            .ok_or_else(|| PyValueError::new_err(format!("no free VLAN on {port}")))?;
        let mut model: DomainModel = self.union.model(urn.domain()).cloned().expect("calendar implies model");
        model.active_reservations.get_or_insert_with(Vec::new).push(ReservationSegment {
            connection_id: format!("background-{}", self.next_background),
            port_urn: urn,
            vlan,
            bandwidth: mbps,
            qos_class: QosClass::GuaranteedCapped,
            interval,
        });
        let model = DomainModel::new(model).map_err(value_error)?;
        self.union = self.union.replace_model(model);
        self.next_background += 1;
        Ok(vlan)
    }

    /// Answers the scheduling queries of an intent document; returns the
    /// query response document.
    #[pyo3(signature = (document, now, display_offset_secs = 0))]
    fn answer(&self, document: &str, now: i64, display_offset_secs: i32) -> PyResult<String> {
        let intent = self.intent(document, now, display_offset_secs)?;
        let answers = answer_queries(&intent, &self.union).map_err(|e| value_error(e.envelope()))?;
        Ok(text(encode(&render_answers(&answers, &intent))))
    }

    /// Computes the end-to-end design of an intent document; returns the
    /// design summary.
    #[pyo3(signature = (document, now, display_offset_secs = 0))]
    fn design(&self, document: &str, now: i64, display_offset_secs: i32) -> PyResult<String> {
        let intent = self.intent(document, now, display_offset_secs)?;
        let design = compute_design(&intent, &self.union, "python", 1).map_err(|e| value_error(e.envelope()))?;
        Ok(text(encode(&summarize(&intent, &design))))
    }

    /// Node-link JSON of the union graph.
    fn graph(&self) -> String {
        serde_json::to_string(&self.union.export_graph()).expect("graph serializes")
    }
}

#[pymodule]
fn fabric_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tbp_duration, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_intent, m)?)?;
    m.add_class::<Fabric>()?;
    Ok(())
}
