//! Discrete-event world: owns the virtual clock, the chains, the relay
//! committee, and the clients, and runs them to quiescence.
//!
//! Both execution modes share one canonical order inside a timestamp batch:
//! events are grouped per actor (relays before clients, by index), actors
//! process their groups against an immutable world view, effects are applied
//! in group order, and block production runs serially last. The parallel
//! mode only parallelizes the (independent) per-actor processing, so both
//! modes produce byte-identical runs.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::contracts::{
    AcceptRecord, ChannelContract, ComputeContract, CrossChainRequest, ProxyContract,
};
use crate::crypto::{Address, AggregateRegistry, BilinearEngine, ClientKeyPair, Committee};
use crate::harness::client::ClientActor;
use crate::harness::metrics::Metrics;
use crate::harness::relay::RelayNode;
use crate::harness::scenario::{Scenario, ScenarioError};
use crate::harness::types::{
    ActorKey, AuditRecord, Effect, WorldEvent, WorldView, CHANNEL, CHANNEL_CONTRACT,
    COMPUTE_CONTRACT, PROXY_CONTRACT,
};
use crate::sim::{EventQueue, SimTime};
use crate::simchain::{Chain, EventKind, TxId};
use crate::sms::NetworkProfile;

/// Hard virtual-time cap; quiescence normally ends runs much earlier.
const MAX_VIRTUAL_MS: SimTime = 3_600_000;

#[derive(Debug)]
pub struct RunReport {
    pub ok: bool,
    pub violations: Vec<String>,
    pub text: String,
    pub metrics: Metrics,
}

enum Holder<E: BilinearEngine> {
    Relay(RelayNode<E>),
    Client(ClientActor),
}

impl<E: BilinearEngine> Holder<E> {
    fn handle(
        &mut self,
        now: SimTime,
        events: Vec<WorldEvent<E>>,
        view: &WorldView<'_, E>,
    ) -> Vec<Effect<E>> {
        let mut out = Vec::new();
        for event in events {
            match self {
                Holder::Relay(r) => out.extend(r.handle(now, event, view)),
                Holder::Client(c) => out.extend(c.handle(now, event, view)),
            }
        }
        out
    }
}

pub struct World<E: BilinearEngine> {
    scenario: Scenario,
    parallel: bool,
    now: SimTime,
    queue: EventQueue<WorldEvent<E>>,
    chains: BTreeMap<String, Chain<E>>,
    relays: Vec<Option<RelayNode<E>>>,
    clients: Vec<Option<ClientActor>>,
    registry: AggregateRegistry<E>,
    relay_pks: Vec<[u8; 32]>,
    client_pks: BTreeMap<Address, [u8; 32]>,
    client_index: BTreeMap<Address, usize>,
    profile: NetworkProfile,
    home_chain: String,
    metrics: Metrics,
    audits: Vec<AuditRecord>,
    logs: Vec<String>,
    violations: Vec<String>,
    submitted_tx: BTreeSet<(String, TxId)>,
    initial_totals: BTreeMap<String, u64>,
}

fn derive_seed(seed: u64, domain: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(domain.as_bytes());
    h.update(index.to_be_bytes());
    h.finalize().into()
}

impl<E: BilinearEngine> World<E> {
    pub fn new(scenario: Scenario, parallel: bool) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let profile = scenario.network.resolve()?;
        let cfg = &scenario.committee;
        let n = cfg.n();
        let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed);
        let committee = Committee::<E>::generate(cfg.f, &mut rng);
        let registry = committee.registry();
        let home_chain = scenario.clients.home_chain.clone();

        let sign_keys: Vec<ClientKeyPair> = (0..n)
            .map(|i| ClientKeyPair::from_seed(&derive_seed(scenario.seed, "relay-sign", i as u64)))
            .collect();
        let relay_pks: Vec<[u8; 32]> = sign_keys.iter().map(|k| k.public_key_bytes()).collect();

        // Chains with the contract fixtures deployed.
        let mut chains = BTreeMap::new();
        for chain_cfg in &scenario.chains {
            let mut chain = Chain::<E>::new(&chain_cfg.id);
            for (account, balance) in &chain_cfg.balances {
                chain.set_balance(account, *balance);
            }
            chain.deploy_contract(
                PROXY_CONTRACT,
                Box::new(ProxyContract::<E>::new(
                    &chain_cfg.id,
                    registry.clone(),
                    cfg.quorum(),
                )),
            )
            .expect("fresh contract id");
            if chain_cfg.id == home_chain {
                chain.deploy_contract(
                    CHANNEL_CONTRACT,
                    Box::new(ChannelContract::<E>::new(
                        registry.clone(),
                        cfg.quorum(),
                        cfg.threshold,
                    )),
                )
                .expect("fresh contract id");
                chain.deploy_contract(
                    COMPUTE_CONTRACT,
                    Box::new(ComputeContract::<E>::new(registry.clone(), cfg.quorum())),
                )
                .expect("fresh contract id");
            }
            // Opening a channel costs visibly more chain time than settling
            // an aggregated update.
            chain.set_exec_cost("open_channel", 200);
            chain.set_exec_cost("update_channel", 50);
            chain.set_exec_cost("close_channel", 100);
            chain.set_exec_cost("cross_query", 20);
            chain.set_exec_cost("cross_accept", 50);
            chain.set_exec_cost("cross_callback", 50);
            chain.set_exec_cost("submit_task", 20);
            chain.set_exec_cost("task_callback", 50);
            chains.insert(chain_cfg.id.clone(), chain);
        }

        // Clients: keys, home-chain accounts, scripts.
        let mut client_pks = BTreeMap::new();
        let mut client_index = BTreeMap::new();
        let mut client_keys = Vec::new();
        for i in 0..scenario.clients.count {
            let key = ClientKeyPair::from_seed(&derive_seed(scenario.seed, "client", i as u64));
            client_pks.insert(key.address.clone(), key.public_key_bytes());
            client_index.insert(key.address.clone(), i);
            client_keys.push(key);
        }
        let peer_addresses: Vec<Address> =
            client_keys.iter().map(|k| k.address.clone()).collect();
        {
            let home = chains.get_mut(&home_chain).expect("validated home chain");
            for key in &client_keys {
                home.register_account(&key.address, key.public_key_bytes());
                home.set_balance(&key.address, scenario.clients.initial_balance);
            }
        }
        let non_home: Vec<String> = scenario
            .chains
            .iter()
            .map(|c| c.id.clone())
            .filter(|id| *id != home_chain)
            .collect();

        let chain_ids: Vec<String> = scenario.chains.iter().map(|c| c.id.clone()).collect();
        let byzantine: BTreeSet<usize> =
            scenario.faults.byzantine_compute.iter().copied().collect();
        let relays: Vec<Option<RelayNode<E>>> = (0..n)
            .map(|i| {
                let relay_rng =
                    ChaCha20Rng::from_seed(derive_seed(scenario.seed, "relay-rng", i as u64));
                Some(RelayNode::new(
                    i,
                    n,
                    cfg.quorum(),
                    committee.keypairs[i].clone(),
                    sign_keys[i].clone(),
                    byzantine.contains(&i),
                    relay_rng,
                    &chain_ids,
                    &home_chain,
                ))
            })
            .collect();

        let mut clients: Vec<Option<ClientActor>> = Vec::new();
        for (i, key) in client_keys.into_iter().enumerate() {
            let script = ClientActor::build_script(
                i,
                &peer_addresses,
                &non_home,
                &scenario.workload,
                scenario.clients.initial_balance,
            );
            let client_rng =
                ChaCha20Rng::from_seed(derive_seed(scenario.seed, "client-rng", i as u64));
            clients.push(Some(ClientActor::new(
                i,
                key,
                client_rng,
                n,
                script,
                scenario.workload.pay_amount_max.max(1),
            )));
        }

        let initial_totals = chains
            .iter()
            .map(|(id, c)| (id.clone(), c.native_total()))
            .collect();

        let mut queue = EventQueue::new();
        for i in 0..n {
            queue.push(cfg.tick_ms, WorldEvent::RelayTick { relay: i });
        }
        for (i, client) in clients.iter_mut().enumerate() {
            let token = client.as_mut().unwrap().arm();
            queue.push(5 + 7 * i as u64, WorldEvent::ClientWake { client: i, token });
        }
        for chain_cfg in &scenario.chains {
            queue.push(
                chain_cfg.block_interval_ms,
                WorldEvent::ProduceBlock { chain: chain_cfg.id.clone() },
            );
        }
        for crash in &scenario.faults.crashes {
            queue.push(crash.at_ms, WorldEvent::CrashRelay { relay: crash.relay });
        }

        Ok(Self {
            scenario,
            parallel,
            now: 0,
            queue,
            chains,
            relays,
            clients,
            registry,
            relay_pks,
            client_pks,
            client_index,
            profile,
            home_chain,
            metrics: Metrics::default(),
            audits: Vec::new(),
            logs: Vec::new(),
            violations: Vec::new(),
            submitted_tx: BTreeSet::new(),
            initial_totals,
        })
    }

    pub fn run(&mut self) -> RunReport {
        while let Some((t, batch)) = self.queue.pop_time_batch() {
            if t > MAX_VIRTUAL_MS {
                self.metrics.bump("time_cap_reached");
                break;
            }
            self.now = t;
            self.process_batch(t, batch);
            if self.finished() {
                break;
            }
        }
        self.check_invariants();
        self.render_report()
    }

    fn process_batch(&mut self, t: SimTime, batch: Vec<WorldEvent<E>>) {
        let clients_active = self
            .clients
            .iter()
            .filter(|c| c.as_ref().is_none_or(|c| !c.done()))
            .count();
        let mut groups: BTreeMap<ActorKey, Vec<WorldEvent<E>>> = BTreeMap::new();
        let mut block_events: Vec<String> = Vec::new();
        for event in batch {
            match event.actor() {
                Some(key) => groups.entry(key).or_default().push(event),
                None => {
                    if let WorldEvent::ProduceBlock { chain } = event {
                        block_events.push(chain);
                    }
                }
            }
        }

        let mut work: Vec<(ActorKey, Holder<E>, Vec<WorldEvent<E>>)> = groups
            .into_iter()
            .map(|(key, events)| {
                let holder = match key {
                    ActorKey::Relay(i) => Holder::Relay(self.relays[i].take().unwrap()),
                    ActorKey::Client(i) => Holder::Client(self.clients[i].take().unwrap()),
                };
                (key, holder, events)
            })
            .collect();

        let results: Vec<Vec<Effect<E>>> = {
            let view = WorldView {
                now: t,
                chains: &self.chains,
                registry: &self.registry,
                relay_pks: &self.relay_pks,
                client_pks: &self.client_pks,
                client_index: &self.client_index,
                profile: &self.profile,
                scenario: &self.scenario,
                home_chain: &self.home_chain,
                clients_active,
            };
            if self.parallel {
                use rayon::prelude::*;
                work.par_iter_mut()
                    .map(|(_, holder, events)| holder.handle(t, std::mem::take(events), &view))
                    .collect()
            } else {
                work.iter_mut()
                    .map(|(_, holder, events)| holder.handle(t, std::mem::take(events), &view))
                    .collect()
            }
        };

        for (key, holder, _) in work {
            match (key, holder) {
                (ActorKey::Relay(i), Holder::Relay(r)) => self.relays[i] = Some(r),
                (ActorKey::Client(i), Holder::Client(c)) => self.clients[i] = Some(c),
                _ => unreachable!("holder kind matches key"),
            }
        }
        for effects in results {
            for effect in effects {
                self.apply(t, effect);
            }
        }
        // Block production is the only mutation of shared chain state, and
        // it runs serially after all actors.
        for chain_id in block_events {
            if let Some(chain) = self.chains.get_mut(&chain_id) {
                chain.produce_block(t);
            }
            let interval = self
                .scenario
                .chains
                .iter()
                .find(|c| c.id == chain_id)
                .map(|c| c.block_interval_ms)
                .unwrap_or(100);
            self.queue.push(t + interval, WorldEvent::ProduceBlock { chain: chain_id });
        }
    }

    fn apply(&mut self, now: SimTime, effect: Effect<E>) {
        match effect {
            Effect::At(time, event) => self.queue.push(time.max(now), event),
            Effect::Submit { chain, tx } => {
                let Some(target) = self.chains.get_mut(&chain) else {
                    self.metrics.bump("submit_unknown_chain");
                    return;
                };
                let key = (chain, tx.tx_id());
                if !self.submitted_tx.insert(key) {
                    self.metrics.bump("duplicate_submission");
                    return;
                }
                target.submit_tx(tx);
            }
            Effect::Metric(sample) => self.metrics.record(sample),
            Effect::Counter(name) => self.metrics.bump(name),
            Effect::Audit(record) => self.audits.push(record),
            Effect::Log(line) => self.logs.push(line),
            Effect::Violation(line) => self.violations.push(line),
        }
    }

    fn finished(&self) -> bool {
        let clients_done = self
            .clients
            .iter()
            .all(|c| c.as_ref().is_some_and(|c| c.done()));
        if !clients_done {
            return false;
        }
        let relays_quiet = self.relays.iter().all(|r| {
            r.as_ref()
                .is_some_and(|r| r.crashed || r.is_quiet())
        });
        if !relays_quiet {
            return false;
        }
        self.chains.values().all(|c| c.mempool_len() == 0)
    }

    // ---- end-of-run invariants ----

    fn check_invariants(&mut self) {
        self.check_conservation();
        self.check_cross_chain_audit();
        self.check_relay_agreement();
    }

    /// Every issued request's amount, for mint accounting on destinations.
    fn issued_requests(&self) -> BTreeMap<u64, CrossChainRequest> {
        let mut out = BTreeMap::new();
        for audit in &self.audits {
            if let AuditRecord::RequestIssued { request_bytes } = audit {
                if let Ok(req) = CrossChainRequest::from_bytes(request_bytes) {
                    out.insert(req.req_id, req);
                }
            }
        }
        out
    }

    /// Native + escrow totals change only by cross-chain credits, which act
    /// as mints on the destination chain in this model.
    fn check_conservation(&mut self) {
        let requests = self.issued_requests();
        for (chain_id, chain) in &self.chains {
            let mut minted = 0u64;
            for event in chain.events() {
                if event.contract_id == PROXY_CONTRACT && event.kind == EventKind::Accept {
                    if let Ok(record) = AcceptRecord::from_bytes(&event.payload) {
                        if let Some(req) = requests.get(&record.req_id) {
                            minted += req.amount;
                        }
                    }
                }
            }
            let escrow = if *chain_id == self.home_chain {
                chain
                    .query_state(CHANNEL_CONTRACT, &format!("escrow_total:{CHANNEL}"))
                    .ok()
                    .flatten()
                    .map(|b| u64::from_be_bytes(b.try_into().unwrap_or_default()))
                    .unwrap_or(0)
            } else {
                0
            };
            let expected = self.initial_totals[chain_id] + minted;
            let actual = chain.native_total() + escrow;
            if actual != expected {
                self.violations.push(format!(
                    "conservation violated on {chain_id}: native+escrow={actual} expected={expected} (minted={minted})"
                ));
            }
        }
    }

    /// Two-phase audit: terminal outcome per request; a completed request
    /// has exactly one Accept per destination and a completed source entry;
    /// no destination accepted a request that never named it.
    fn check_cross_chain_audit(&mut self) {
        let requests = self.issued_requests();
        let mut outcomes: BTreeMap<u64, &'static str> = BTreeMap::new();
        for audit in &self.audits {
            if let AuditRecord::RequestOutcome { req_id, outcome } = audit {
                outcomes.entry(*req_id).or_insert(outcome);
            }
        }
        for (req_id, req) in &requests {
            let Some(outcome) = outcomes.get(req_id) else {
                self.violations
                    .push(format!("request {req_id} has no terminal outcome"));
                continue;
            };
            let completed = self
                .chains
                .get(&req.from_chain)
                .and_then(|c| {
                    c.query_state(PROXY_CONTRACT, &format!("completed:{req_id}")).ok().flatten()
                })
                .is_some();
            if *outcome == "Completed" {
                if !completed {
                    self.violations.push(format!(
                        "request {req_id} reported Completed but source contract disagrees"
                    ));
                }
                for (dest, _) in &req.to {
                    let accepts = self
                        .chains
                        .get(dest)
                        .map(|c| {
                            c.events()
                                .iter()
                                .filter(|e| {
                                    e.contract_id == PROXY_CONTRACT
                                        && e.kind == EventKind::Accept
                                        && AcceptRecord::from_bytes(&e.payload)
                                            .is_ok_and(|r| r.req_id == *req_id)
                                })
                                .count()
                        })
                        .unwrap_or(0);
                    if accepts != 1 {
                        self.violations.push(format!(
                            "request {req_id} has {accepts} Accept events on {dest}, expected 1"
                        ));
                    }
                }
            } else if completed {
                self.violations.push(format!(
                    "request {req_id} reported {outcome} but completed on-chain"
                ));
            }
        }
        // No destination effect without a corresponding issued request.
        for (chain_id, chain) in &self.chains {
            for event in chain.events() {
                if event.contract_id == PROXY_CONTRACT && event.kind == EventKind::Accept {
                    let ok = AcceptRecord::from_bytes(&event.payload).is_ok_and(|r| {
                        requests
                            .get(&r.req_id)
                            .is_some_and(|req| req.to.iter().any(|(c, _)| c == chain_id))
                    });
                    if !ok {
                        self.violations.push(format!(
                            "unmatched Accept event on {chain_id}"
                        ));
                    }
                }
            }
        }
    }

    /// After quiescing, all live relays agree on the off-chain channel view.
    fn check_relay_agreement(&mut self) {
        let live: Vec<&RelayNode<E>> = self
            .relays
            .iter()
            .filter_map(|r| r.as_ref())
            .filter(|r| !r.crashed)
            .collect();
        let Some(first) = live.first() else {
            return;
        };
        for other in &live[1..] {
            if other.escrow_view() != first.escrow_view() {
                self.violations.push(format!(
                    "relay {} escrow view diverges from relay {}",
                    other.id, first.id
                ));
            }
            if other.nonces_view() != first.nonces_view() {
                self.violations.push(format!(
                    "relay {} nonce view diverges from relay {}",
                    other.id, first.id
                ));
            }
        }
    }

    fn render_report(&self) -> RunReport {
        let mut text = String::new();
        // No parallel flag here: both modes must render byte-identical
        // reports for the same scenario.
        text.push_str(&format!(
            "run seed={} engine={} n={} clients={} end_ms={}\n",
            self.scenario.seed,
            E::NAME,
            self.scenario.committee.n(),
            self.scenario.clients.count,
            self.now,
        ));
        self.metrics.render(&mut text);
        for (chain_id, chain) in &self.chains {
            text.push_str(&format!(
                "chain {chain_id} height={} events={} native_total={} state_root={}\n",
                chain.height(),
                chain.events().len(),
                chain.native_total(),
                chain.state_root(),
            ));
        }
        for line in &self.logs {
            text.push_str(&format!("log {line}\n"));
        }
        for line in &self.violations {
            text.push_str(&format!("violation {line}\n"));
        }
        RunReport {
            ok: self.violations.is_empty(),
            violations: self.violations.clone(),
            text,
            metrics: self.metrics.clone(),
        }
    }

    // ---- inspection hooks for tests ----

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn chain(&self, id: &str) -> Option<&Chain<E>> {
        self.chains.get(id)
    }

    pub fn relay(&self, i: usize) -> &RelayNode<E> {
        self.relays[i].as_ref().unwrap()
    }

    pub fn client(&self, i: usize) -> &ClientActor {
        self.clients[i].as_ref().unwrap()
    }

    pub fn audits(&self) -> &[AuditRecord] {
        &self.audits
    }
}

/// Convenience: build and run a scenario in one call.
#[allow(clippy::result_large_err)]
pub fn run_scenario<E: BilinearEngine>(
    scenario: Scenario,
    parallel: bool,
) -> Result<RunReport, ScenarioError> {
    let mut world = World::<E>::new(scenario, parallel)?;
    Ok(world.run())
}
