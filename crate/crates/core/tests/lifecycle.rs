use marketsim_core::attestation::{AttestationRecord, AttestationRegistry};
use marketsim_core::domain::{
    DeploymentSpec, DeploymentState, ExecutionOutcome, ExecutionReport, ResourceRequirements,
    Schedule,
};
use marketsim_core::orchestrator::{
    read_event_log, write_event_log, EventKind, Orchestrator, OrchestratorConfig,
    ProcessorAdvertisement,
};
use marketsim_core::reputation::ReputationAccumulator;
use marketsim_core::{AccountId, DeploymentId};

fn attestation(id: &str) -> AttestationRecord {
    AttestationRecord {
        processor: id.into(),
        device_model: "phone".into(),
        security_level: 2,
        issued_at: 0,
        expires_at: 1_000_000,
        revoked: false,
    }
}

fn report(id: u64, execution: u32, ok: bool, at: u64) -> ExecutionReport {
    ExecutionReport {
        deployment: DeploymentId(id),
        execution,
        outcome: if ok {
            ExecutionOutcome::Success {
                settlement_ref: format!("tx{execution}"),
            }
        } else {
            ExecutionOutcome::Failure {
                error: "crashed".into(),
            }
        },
        reported_at: at,
    }
}

#[test]
fn deployment_runs_to_completion_and_conserves_tokens() {
    let registry =
        AttestationRegistry::from_records([attestation("cheap"), attestation("dear")]).unwrap();
    let mut market = Orchestrator::new(OrchestratorConfig::default(), registry);
    market.advertise(ProcessorAdvertisement::new("cheap", 60));
    market.advertise(ProcessorAdvertisement::new("dear", 90));
    let consumer = AccountId::new("dev");
    market.ledger_mut().mint(&consumer, 1_000);

    let spec = DeploymentSpec {
        id: DeploymentId(7),
        consumer: consumer.clone(),
        schedule: Schedule {
            start: 100,
            end: 400,
            interval: 100,
            duration: 50,
            max_start_delay: 20,
        },
        reward_per_execution: 100,
        min_reputation: None,
        min_security_level: Some(1),
        destination: "wallet".into(),
        resource_requirements: ResourceRequirements::default(),
    };
    market.register_deployment(spec, 0).unwrap();
    assert_eq!(market.ledger().locked(DeploymentId(7)), 300);

    let assignment = market
        .match_deployment(DeploymentId(7), 0)
        .unwrap()
        .unwrap();
    assert_eq!(assignment.processor.as_str(), "cheap");
    assert_eq!(assignment.slots.len(), 3);

    market.submit_report(&report(7, 1, true, 150), 150).unwrap();
    market
        .submit_report(&report(7, 2, false, 252), 252)
        .unwrap();
    // third execution never reports; its window closes at 350 + 5
    let closed = market.advance_time(1_000).unwrap();
    assert!(closed.iter().any(|e| e.kind == EventKind::Malus));
    assert!(closed.iter().any(|e| e.kind == EventKind::Done));

    let record = market.deployment(DeploymentId(7)).unwrap();
    let DeploymentState::Done { outcome } = record.state else {
        panic!("not done: {:?}", record.state);
    };
    assert_eq!((outcome.succeeded, outcome.failed), (1, 2));
    assert_eq!(market.ledger().balance(&"cheap".into()), 100);
    assert_eq!(market.ledger().balance(&consumer), 900);
    assert_eq!(market.ledger().locked(DeploymentId(7)), 0);
    assert!(market.ledger().verify());

    let expected = ReputationAccumulator::default()
        .record_outcome(true, 100)
        .and_then(|r| r.record_outcome(false, 100))
        .and_then(|r| r.record_outcome(false, 100))
        .unwrap();
    assert_eq!(
        market.processor(&"cheap".into()).unwrap().reputation,
        expected
    );

    let mut log = Vec::new();
    write_event_log(market.events(), &mut log).unwrap();
    assert_eq!(read_event_log(log.as_slice()).unwrap(), market.events());
}

#[test]
fn unmatched_deployment_expires_with_refund() {
    let registry = AttestationRegistry::from_records([attestation("p")]).unwrap();
    let mut market = Orchestrator::new(OrchestratorConfig::default(), registry);
    market.advertise(ProcessorAdvertisement::new("p", 500));
    let consumer = AccountId::new("dev");
    market.ledger_mut().mint(&consumer, 1_000);
    let spec = DeploymentSpec {
        id: DeploymentId(1),
        consumer: consumer.clone(),
        schedule: Schedule {
            start: 0,
            end: 100,
            interval: 100,
            duration: 10,
            max_start_delay: 5,
        },
        reward_per_execution: 100,
        min_reputation: None,
        min_security_level: None,
        destination: String::new(),
        resource_requirements: ResourceRequirements::default(),
    };
    market.register_deployment(spec, 0).unwrap();
    assert!(market
        .match_deployment(DeploymentId(1), 0)
        .unwrap()
        .is_none());
    let events = market.advance_time(10).unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].kind, EventKind::Expired);
    assert!(market.is_expired(DeploymentId(1)));
    assert_eq!(market.ledger().balance(&consumer), 1_000);
    assert!(market.ledger().verify());
}
