//! Reference models shipped with the crate.
//!
//! The JSON files under `fixtures/` hold the same models with named
//! queries and are what the CLI reads; the constructors here are the
//! in-code equivalents used by tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dag::{Dag, NodeId};
use crate::inference::{Event, Query};
use crate::scm::{Cpt, CptRow, Mechanism, Observability, Role, Scm, VarDomain, VariableMeta};

pub const DISEASE_JSON: &str = include_str!("../fixtures/disease.json");
pub const TUTORING_JSON: &str = include_str!("../fixtures/tutoring.json");

/// A model plus named queries, the format read by `causalbench infer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub scm: Scm,
    #[serde(default)]
    pub queries: BTreeMap<String, Query>,
}

fn binary(node: usize, name: &str, role: Role, scenario: &str) -> VariableMeta {
    VariableMeta {
        node: NodeId(node),
        name: name.into(),
        domain: VarDomain::binary(),
        observability: Observability::Observed,
        role,
        scenario: scenario.into(),
    }
}

fn table(child: usize, parents: &[usize], p_on: &[f64]) -> Cpt {
    let row = |p: f64| vec![((1.0 - p) * 1000.0).round() / 1000.0, p];
    let rows = crate::scm::parent_tuples(&vec![2; parents.len()])
        .into_iter()
        .zip(p_on)
        .map(|(given, &p)| CptRow {
            given,
            probs: row(p),
        })
        .collect();
    Cpt {
        child: NodeId(child),
        parents: parents.iter().map(|&p| NodeId(p)).collect(),
        mechanism: Mechanism::Specified,
        rows,
    }
}

/// Infection → Medicine → Recovery.
///
/// P(infected) = 0.1; P(medicine | infected) = 0.7, P(medicine | not) = 0.3;
/// P(recover | medicine) = 0.9, P(recover | no medicine) = 0.4.
pub fn disease_scm() -> Scm {
    let dag = Dag::from_pairs(3, &[(0, 1), (1, 2)]);
    let metas = vec![
        binary(0, "Infection", Role::Cause, "medicine"),
        binary(1, "Medicine", Role::Mediator, "medicine"),
        binary(2, "Recovery", Role::Outcome, "medicine"),
    ];
    let cpts = vec![
        table(0, &[], &[0.1]),
        table(1, &[0], &[0.3, 0.7]),
        table(2, &[1], &[0.4, 0.9]),
    ];
    Scm::new(dag, metas, cpts).expect("disease fixture is valid")
}

/// Ability → Pass ← Tutoring, with Ability and Tutoring independent.
///
/// P(ability) = 0.4 and able students always pass; P(tutored) = 0.25;
/// otherwise P(pass | tutored) = 0.8, P(pass | not) = 0.5.
pub fn tutoring_scm() -> Scm {
    let dag = Dag::from_pairs(3, &[(0, 2), (1, 2)]);
    let metas = vec![
        binary(0, "Ability", Role::Cause, "education"),
        binary(1, "Tutoring", Role::Cause, "education"),
        binary(2, "Pass", Role::Outcome, "education"),
    ];
    let cpts = vec![
        table(0, &[], &[0.4]),
        table(1, &[], &[0.25]),
        // (ability, tutoring) = 00, 01, 10, 11
        table(2, &[0, 1], &[0.5, 0.8, 1.0, 1.0]),
    ];
    Scm::new(dag, metas, cpts).expect("tutoring fixture is valid")
}

/// "Still infected": infected and not recovered.
pub fn still_infected_query() -> Query {
    Query::observational(
        Event::from_pairs([(NodeId(0), 1), (NodeId(2), 0)]),
        Event::empty(),
    )
}

pub fn pass_rate_query() -> Query {
    Query::observational(Event::from_pairs([(NodeId(2), 1)]), Event::empty())
}

pub fn load_model_file(text: &str) -> Result<ModelFile, serde_json::Error> {
    serde_json::from_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_files_match_constructors() {
        let disease = load_model_file(DISEASE_JSON).unwrap();
        assert_eq!(disease.scm.cpts(), disease_scm().cpts());
        assert_eq!(disease.scm.graph(), disease_scm().graph());
        assert_eq!(disease.queries["still_infected"], still_infected_query());
        let tutoring = load_model_file(TUTORING_JSON).unwrap();
        assert_eq!(tutoring.scm.cpts(), tutoring_scm().cpts());
        assert_eq!(tutoring.queries["pass_rate"], pass_rate_query());
    }
}
