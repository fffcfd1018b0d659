use std::collections::{BTreeMap, BTreeSet};

use causalbench::dataset::{
    disease_instance, generate_dataset, GenerationConfig, Instance, Metadata, Variant,
};
use causalbench::eval::{
    build_structured_prompt, collect_responses, parse_graph_response, run_sensitivity_suite,
    score_answers, score_structure_discovery, structured_prompts, EvalError, ModelBackend,
    OracleBackend,
};
use causalbench::fixtures;
use causalbench::noise::{apply_plan, NoiseConfig, NoisePlan};
use causalbench::par::Execution;
use causalbench::{Edge, Event, NodeId, PerturbKind, Query};

fn instance(id: &str, scm: causalbench::Scm, query: Query) -> Instance {
    let metadata = Metadata {
        index: 0,
        master_seed: 0,
        instance_seed: 0,
        node_count: scm.node_count(),
        motif: None,
        scenario: scm.metas()[0].scenario.clone(),
        template_variant: 0,
        noise_kinds: vec![],
        noise_skips: vec![],
        noise_variables: vec![],
    };
    Instance::assemble(id, scm, query, 0, metadata).unwrap()
}

fn oracle_reply(inst: &Instance) -> String {
    let oracle = OracleBackend::new([inst]);
    let prompt = build_structured_prompt(inst, inst.scm.graph(), inst.scm.metas(), Variant::Clean);
    oracle.respond(&prompt, &inst.id).unwrap()
}

fn generated(count: usize, seed: u64) -> Vec<Instance> {
    let cfg = GenerationConfig {
        seed,
        count,
        noise: NoiseConfig {
            combination_sizes: Some((1..=7).collect()),
            ..Default::default()
        },
        ..Default::default()
    };
    generate_dataset(&cfg, Execution::Auto).unwrap()
}

#[test]
fn oracle_reproduces_reference_answers() {
    assert_eq!(oracle_reply(&disease_instance()), "0.025");
    let tutoring = instance(
        "tutoring",
        fixtures::tutoring_scm(),
        fixtures::pass_rate_query(),
    );
    assert_eq!(oracle_reply(&tutoring), "0.745");
    // Having taken medicine and recovered, had they taken medicine they recover.
    let q = Query::counterfactual(
        Event::from_pairs([(NodeId(2), 1)]),
        [(NodeId(1), 1)].into_iter().collect(),
        Event::from_pairs([(NodeId(1), 1), (NodeId(2), 1)]),
    );
    assert_eq!(
        oracle_reply(&instance("consistency", fixtures::disease_scm(), q)),
        "1.0"
    );
}

#[test]
fn oracle_is_exact_on_both_variants() {
    let data = generated(150, 31);
    let oracle = OracleBackend::new(&data);
    for variant in [Variant::Clean, Variant::Noisy] {
        let responses = collect_responses(
            &oracle,
            &structured_prompts(&data, variant),
            Execution::Auto,
        )
        .unwrap();
        let report = score_answers(&data, &responses, 0.0, variant).unwrap();
        assert_eq!(report.overall.accuracy, 1.0, "{variant:?}");
    }
}

#[test]
fn groups_recombine_to_overall() {
    let data = generated(120, 5);
    // Alternate right and wrong answers so groups are not trivially 0 or 1.
    let responses: BTreeMap<String, String> = data
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let r = if i % 3 == 0 {
                "I cannot tell".to_string()
            } else {
                inst.answer.to_string()
            };
            (inst.id.clone(), r)
        })
        .collect();
    let report = score_answers(&data, &responses, 0.01, Variant::Noisy).unwrap();
    let correct = report.verdicts.iter().filter(|v| v.correct).count();
    assert_eq!(report.overall.correct, correct);
    assert_eq!(report.overall.accuracy, correct as f64 / data.len() as f64);
    let by_size: usize = report.by_combination_size.values().map(|g| g.correct).sum();
    let sized: usize = report.by_combination_size.values().map(|g| g.total).sum();
    assert_eq!((by_size, sized), (correct, data.len()));
    for (kind, group) in &report.by_noise_kind {
        let members: Vec<_> = report
            .verdicts
            .iter()
            .filter(|v| v.noise_kinds.contains(kind))
            .collect();
        assert_eq!(group.total, members.len());
        assert_eq!(group.correct, members.iter().filter(|v| v.correct).count());
    }
    let reversed: BTreeMap<String, String> = responses.into_iter().rev().collect();
    assert_eq!(
        score_answers(&data, &reversed, 0.01, Variant::Noisy).unwrap(),
        report
    );

    let junk: BTreeMap<String, String> = data
        .iter()
        .map(|i| (i.id.clone(), "unclear".into()))
        .collect();
    assert_eq!(
        score_answers(&data, &junk, 0.01, Variant::Noisy)
            .unwrap()
            .overall
            .accuracy,
        0.0
    );
}

#[test]
fn masked_observation_is_left_out_of_the_prompt() {
    let mut inst = disease_instance();
    inst.observations_clean = [(NodeId(1), 1)].into_iter().collect();
    let view = inst.view(Variant::Clean);
    let plan = NoisePlan::MaskObservation { node: NodeId(1) };
    let (noisy, record) = apply_plan(&view, &inst.scm, &plan, &NoiseConfig::default()).unwrap();
    inst.set_noisy(noisy, vec![record]);
    let clean = build_structured_prompt(&inst, inst.scm.graph(), inst.scm.metas(), Variant::Clean);
    let masked = build_structured_prompt(&inst, inst.scm.graph(), inst.scm.metas(), Variant::Noisy);
    assert!(clean.contains("Medicine = "));
    assert!(!masked.contains("Medicine = "));
    assert!(masked.contains("Infection -> Medicine"));
}

#[test]
fn sensitivity_suite_runs_through_prompts() {
    let data = generated(100, 77);
    let oracle = OracleBackend::new(&data);
    let kinds = [
        PerturbKind::EdgeDeletion,
        PerturbKind::FalseEdge,
        PerturbKind::DirectionReversal,
    ];
    let report =
        run_sensitivity_suite(&data, &kinds, &[1, 2], &oracle, 3, Execution::Auto).unwrap();
    assert_eq!(report.baseline.accuracy, 1.0);
    assert_eq!(report.rows.len(), 6);
    for row in &report.rows {
        assert!(row.all_acyclic);
        assert_eq!(row.evaluated + row.skipped.len(), data.len());
        assert!(row.accuracy <= 1.0);
    }
    // Dropping or adding edges changes some answers.
    assert!(report.rows.iter().any(|r| r.accuracy < 1.0));
}

#[test]
fn too_many_deletions_skip_the_instance() {
    let inst = disease_instance();
    let oracle = OracleBackend::new([&inst]);
    let report = run_sensitivity_suite(
        std::slice::from_ref(&inst),
        &[PerturbKind::EdgeDeletion],
        &[3],
        &oracle,
        0,
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(report.rows[0].evaluated, 0);
    assert_eq!(report.rows[0].skipped.len(), 1);
    assert_eq!(report.rows[0].skipped[0].id, "disease");
}

#[test]
fn edge_deletion_changes_only_the_graph_block() {
    let data = generated(40, 8);
    let prompts = causalbench::eval::perturbed_prompts(
        &data,
        PerturbKind::EdgeDeletion,
        1,
        9,
        Variant::Clean,
        Execution::Auto,
    );
    let strip = |p: &str| -> String {
        let mut in_graph = false;
        p.lines()
            .filter(|l| {
                if l.trim() == "[Causal Graph]" {
                    in_graph = true;
                } else if l.trim().is_empty() {
                    in_graph = false;
                }
                !in_graph
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    for (inst, p) in data.iter().zip(&prompts) {
        let base =
            build_structured_prompt(inst, inst.scm.graph(), inst.scm.metas(), Variant::Clean);
        let perturbed = p.prompt.as_ref().unwrap();
        assert_ne!(&base, perturbed);
        assert_eq!(strip(&base), strip(perturbed));
    }
}

fn chain_copies(n: usize) -> Vec<Instance> {
    (0..n)
        .map(|i| {
            let mut inst = disease_instance();
            inst.id = format!("d{i}");
            inst
        })
        .collect()
}

fn truth_edges(inst: &Instance) -> BTreeSet<Edge> {
    inst.scm.graph().edges().iter().copied().collect()
}

#[test]
fn structure_scores_are_micro_averaged() {
    let data = chain_copies(10);
    let perfect: BTreeMap<String, BTreeSet<Edge>> = data
        .iter()
        .map(|i| (i.id.clone(), truth_edges(i)))
        .collect();
    assert_eq!(
        score_structure_discovery(&perfect, &data).unwrap().micro.f1,
        1.0
    );

    let mut one_wrong = perfect.clone();
    one_wrong.insert(
        "d9".into(),
        [(NodeId(2), NodeId(0)), (NodeId(0), NodeId(2))]
            .into_iter()
            .collect(),
    );
    let r = score_structure_discovery(&one_wrong, &data).unwrap();
    assert_eq!(
        (
            r.micro.true_positives,
            r.micro.false_positives,
            r.micro.false_negatives
        ),
        (18, 2, 2)
    );
    assert_eq!(r.micro.precision, 0.9);
    assert_eq!(r.micro.recall, 0.9);
    assert_eq!(r.averaging, "micro");

    let mut empty = perfect.clone();
    empty.insert("d0".into(), BTreeSet::new());
    let r = score_structure_discovery(&empty, &data).unwrap();
    assert_eq!(r.per_instance["d0"].recall, 0.0);
    assert_eq!(r.micro.false_negatives, 2);
    assert_eq!(r.micro.recall, 18.0 / 20.0);

    let mut missing = perfect;
    missing.remove("d3");
    assert!(matches!(
        score_structure_discovery(&missing, &data),
        Err(EvalError::MissingPrediction(ids)) if ids == vec!["d3".to_string()]
    ));
}

#[test]
fn reversed_edge_halves_f1() {
    let data = chain_copies(1);
    let parsed = parse_graph_response(
        "Medicine -> Infection\nMedicine -> Recovery",
        data[0].scm.metas(),
    )
    .unwrap();
    let predicted = BTreeMap::from([("d0".to_string(), parsed.edges)]);
    let r = score_structure_discovery(&predicted, &data).unwrap();
    assert_eq!(r.micro.f1, 0.5);
}
