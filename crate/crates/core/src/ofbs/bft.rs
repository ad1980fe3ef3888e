//! Single-shot PBFT instance used by the relay committee: three phases
//! (pre-prepare, prepare, commit) with quorum 2f+1 of n = 3f+1, round-robin
//! view change on leader failure, abort after n failed views.
//!
//! Instances are pure state machines: they consume messages and emit
//! actions; delivery order, delays, and drops are owned by the caller, which
//! keeps every schedule replayable.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

pub type ProposalDigest = [u8; 32];

pub fn proposal_digest(proposal: &[u8]) -> ProposalDigest {
    Sha256::digest(proposal).into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BftMessage {
    PrePrepare {
        view: u64,
        proposal: Vec<u8>,
    },
    Prepare {
        view: u64,
        digest: ProposalDigest,
    },
    Commit {
        view: u64,
        digest: ProposalDigest,
    },
    /// Vote to move to `new_view`, carrying the sender's highest prepared
    /// (view, proposal) so the next leader cannot drop a value that may
    /// already have been decided.
    ViewChange {
        new_view: u64,
        prepared: Option<(u64, Vec<u8>)>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BftAction {
    Broadcast(BftMessage),
    Decided(Vec<u8>),
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BftStatus {
    Running,
    Decided(Vec<u8>),
    Aborted,
}

#[derive(Debug, Clone)]
pub struct BftInstance {
    pub node_id: usize,
    n: usize,
    f: usize,
    /// Rotates which node leads view 0, so concurrent instances spread
    /// leadership across the committee.
    leader_offset: usize,
    view: u64,
    my_proposal: Option<Vec<u8>>,
    /// Pre-prepare accepted per view.
    accepted: BTreeMap<u64, Vec<u8>>,
    prepares: BTreeMap<(u64, ProposalDigest), BTreeSet<usize>>,
    commits: BTreeMap<(u64, ProposalDigest), BTreeSet<usize>>,
    /// Highest (view, proposal) this node saw reach a prepare quorum.
    prepared: Option<(u64, Vec<u8>)>,
    sent_prepare: BTreeSet<u64>,
    sent_commit: BTreeSet<u64>,
    view_change_votes: BTreeMap<u64, BTreeMap<usize, Option<(u64, Vec<u8>)>>>,
    voted_view_change: BTreeSet<u64>,
    status: BftStatus,
}

impl BftInstance {
    pub fn new(node_id: usize, n: usize, f: usize) -> Self {
        Self::with_leader_offset(node_id, n, f, 0)
    }

    pub fn with_leader_offset(node_id: usize, n: usize, f: usize, leader_offset: usize) -> Self {
        assert!(n >= 3 * f + 1, "committee too small for f");
        Self {
            node_id,
            n,
            f,
            leader_offset,
            view: 0,
            my_proposal: None,
            accepted: BTreeMap::new(),
            prepares: BTreeMap::new(),
            commits: BTreeMap::new(),
            prepared: None,
            sent_prepare: BTreeSet::new(),
            sent_commit: BTreeSet::new(),
            view_change_votes: BTreeMap::new(),
            voted_view_change: BTreeSet::new(),
            status: BftStatus::Running,
        }
    }

    pub fn leader_of(&self, view: u64) -> usize {
        ((self.leader_offset as u64 + view) % self.n as u64) as usize
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn status(&self) -> &BftStatus {
        &self.status
    }

    fn quorum(&self) -> usize {
        2 * self.f + 1
    }

    /// Every correct node calls this with its (identical) derived proposal;
    /// the view-0 leader additionally broadcasts the pre-prepare.
    pub fn start(&mut self, proposal: Vec<u8>) -> Vec<BftAction> {
        if self.status != BftStatus::Running {
            return Vec::new();
        }
        self.my_proposal = Some(proposal.clone());
        let mut actions = Vec::new();
        if self.leader_of(self.view) == self.node_id && !self.accepted.contains_key(&self.view) {
            // The leader accepts its own proposal; broadcasts are not
            // self-delivered.
            self.accepted.insert(self.view, proposal.clone());
            actions.push(BftAction::Broadcast(BftMessage::PrePrepare {
                view: self.view,
                proposal,
            }));
        }
        self.advance(&mut actions);
        actions
    }

    pub fn handle_message(&mut self, from: usize, msg: BftMessage) -> Vec<BftAction> {
        if self.status != BftStatus::Running {
            return Vec::new();
        }
        let mut actions = Vec::new();
        match msg {
            BftMessage::PrePrepare { view, proposal } => {
                // Only the view's leader may propose, once per view.
                if from == self.leader_of(view) && !self.accepted.contains_key(&view) {
                    self.accepted.insert(view, proposal);
                }
            }
            BftMessage::Prepare { view, digest } => {
                self.prepares.entry((view, digest)).or_default().insert(from);
            }
            BftMessage::Commit { view, digest } => {
                self.commits.entry((view, digest)).or_default().insert(from);
            }
            BftMessage::ViewChange { new_view, prepared } => {
                self.view_change_votes
                    .entry(new_view)
                    .or_default()
                    .insert(from, prepared);
            }
        }
        self.advance(&mut actions);
        actions
    }

    /// Round timeout in the current view: vote to move on.
    pub fn on_timeout(&mut self) -> Vec<BftAction> {
        if self.status != BftStatus::Running {
            return Vec::new();
        }
        let mut actions = Vec::new();
        self.vote_view_change(self.view + 1, &mut actions);
        self.advance(&mut actions);
        actions
    }

    fn vote_view_change(&mut self, new_view: u64, actions: &mut Vec<BftAction>) {
        if !self.voted_view_change.insert(new_view) {
            return;
        }
        let prepared = self.prepared.clone();
        self.view_change_votes
            .entry(new_view)
            .or_default()
            .insert(self.node_id, prepared.clone());
        actions.push(BftAction::Broadcast(BftMessage::ViewChange {
            new_view,
            prepared,
        }));
    }

    /// Re-evaluate all thresholds after any state change.
    fn advance(&mut self, actions: &mut Vec<BftAction>) {
        loop {
            let before = actions.len();
            self.try_prepare(actions);
            self.try_record_prepared();
            self.try_commit(actions);
            self.try_decide(actions);
            self.try_join_view_change(actions);
            self.try_enter_view(actions);
            if self.status != BftStatus::Running || actions.len() == before {
                break;
            }
        }
    }

    fn try_prepare(&mut self, actions: &mut Vec<BftAction>) {
        let view = self.view;
        if self.sent_prepare.contains(&view) {
            return;
        }
        if let Some(proposal) = self.accepted.get(&view) {
            let digest = proposal_digest(proposal);
            self.sent_prepare.insert(view);
            self.prepares
                .entry((view, digest))
                .or_default()
                .insert(self.node_id);
            actions.push(BftAction::Broadcast(BftMessage::Prepare { view, digest }));
        }
    }

    fn try_record_prepared(&mut self) {
        let view = self.view;
        let Some(proposal) = self.accepted.get(&view) else {
            return;
        };
        let digest = proposal_digest(proposal);
        let count = self.prepares.get(&(view, digest)).map_or(0, BTreeSet::len);
        if count >= self.quorum() {
            let better = self.prepared.as_ref().is_none_or(|(v, _)| *v < view);
            if better {
                self.prepared = Some((view, proposal.clone()));
            }
        }
    }

    fn try_commit(&mut self, actions: &mut Vec<BftAction>) {
        let view = self.view;
        if self.sent_commit.contains(&view) {
            return;
        }
        let Some(proposal) = self.accepted.get(&view) else {
            return;
        };
        let digest = proposal_digest(proposal);
        let count = self.prepares.get(&(view, digest)).map_or(0, BTreeSet::len);
        if count >= self.quorum() {
            self.sent_commit.insert(view);
            self.commits
                .entry((view, digest))
                .or_default()
                .insert(self.node_id);
            actions.push(BftAction::Broadcast(BftMessage::Commit { view, digest }));
        }
    }

    fn try_decide(&mut self, actions: &mut Vec<BftAction>) {
        let view = self.view;
        let Some(proposal) = self.accepted.get(&view) else {
            return;
        };
        let digest = proposal_digest(proposal);
        let count = self.commits.get(&(view, digest)).map_or(0, BTreeSet::len);
        if count >= self.quorum() {
            self.status = BftStatus::Decided(proposal.clone());
            actions.push(BftAction::Decided(proposal.clone()));
        }
    }

    /// Join a view change once f+1 peers vote for it, so one slow timer
    /// cannot strand a node in a dead view.
    fn try_join_view_change(&mut self, actions: &mut Vec<BftAction>) {
        let candidates: Vec<u64> = self
            .view_change_votes
            .iter()
            .filter(|(v, votes)| **v > self.view && votes.len() >= self.f + 1)
            .map(|(v, _)| *v)
            .collect();
        for new_view in candidates {
            self.vote_view_change(new_view, actions);
        }
    }

    fn try_enter_view(&mut self, actions: &mut Vec<BftAction>) {
        let target: Option<u64> = self
            .view_change_votes
            .iter()
            .filter(|(v, votes)| **v > self.view && votes.len() >= self.quorum())
            .map(|(v, _)| *v)
            .max();
        let Some(new_view) = target else {
            return;
        };
        if new_view >= self.n as u64 {
            self.status = BftStatus::Aborted;
            actions.push(BftAction::Aborted);
            return;
        }
        self.view = new_view;
        if self.leader_of(new_view) == self.node_id && !self.accepted.contains_key(&new_view) {
            // Propose the highest prepared value carried by the quorum, or
            // this node's own derived proposal.
            let votes = &self.view_change_votes[&new_view];
            let carried = votes
                .values()
                .filter_map(|p| p.as_ref())
                .max_by_key(|(v, _)| *v)
                .map(|(_, proposal)| proposal.clone());
            let proposal = carried.or_else(|| self.my_proposal.clone());
            if let Some(proposal) = proposal {
                self.accepted.insert(new_view, proposal.clone());
                actions.push(BftAction::Broadcast(BftMessage::PrePrepare {
                    view: new_view,
                    proposal,
                }));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// Delivers every broadcast to all live nodes in FIFO order; when the
    /// network drains without a decision, fires timeouts at all live nodes.
    struct Net {
        nodes: Vec<BftInstance>,
        crashed: BTreeSet<usize>,
        queue: VecDeque<(usize, BftMessage)>,
    }

    impl Net {
        fn new(n: usize, f: usize, crashed: &[usize]) -> Self {
            Self {
                nodes: (0..n).map(|i| BftInstance::new(i, n, f)).collect(),
                crashed: crashed.iter().copied().collect(),
                queue: VecDeque::new(),
            }
        }

        fn absorb(&mut self, from: usize, actions: Vec<BftAction>) {
            for action in actions {
                if let BftAction::Broadcast(msg) = action {
                    self.queue.push_back((from, msg));
                }
            }
        }

        fn start(&mut self, proposal: &[u8]) {
            for i in 0..self.nodes.len() {
                if !self.crashed.contains(&i) {
                    let actions = self.nodes[i].start(proposal.to_vec());
                    self.absorb(i, actions);
                }
            }
        }

        fn drain(&mut self) {
            while let Some((from, msg)) = self.queue.pop_front() {
                if self.crashed.contains(&from) {
                    continue;
                }
                for i in 0..self.nodes.len() {
                    if self.crashed.contains(&i) {
                        continue;
                    }
                    let actions = self.nodes[i].handle_message(from, msg.clone());
                    self.absorb(i, actions);
                }
            }
        }

        fn run(&mut self, proposal: &[u8]) {
            self.start(proposal);
            for _ in 0..2 * self.nodes.len() {
                self.drain();
                let undecided = (0..self.nodes.len())
                    .any(|i| !self.crashed.contains(&i) && *self.nodes[i].status() == BftStatus::Running);
                if !undecided {
                    return;
                }
                for i in 0..self.nodes.len() {
                    if !self.crashed.contains(&i) {
                        let actions = self.nodes[i].on_timeout();
                        self.absorb(i, actions);
                    }
                }
            }
            self.drain();
        }

        fn decided_values(&self) -> Vec<Vec<u8>> {
            self.nodes
                .iter()
                .filter_map(|node| match node.status() {
                    BftStatus::Decided(v) => Some(v.clone()),
                    _ => None,
                })
                .collect()
        }
    }

    #[test]
    fn fault_free_commit_in_view_zero() {
        let mut net = Net::new(4, 1, &[]);
        net.start(b"batch");
        net.drain();
        for node in &net.nodes {
            assert_eq!(*node.status(), BftStatus::Decided(b"batch".to_vec()));
            assert_eq!(node.view(), 0);
        }
    }

    #[test]
    fn crashed_leader_commits_in_next_view() {
        let mut net = Net::new(4, 1, &[0]);
        net.run(b"batch");
        for i in 1..4 {
            assert_eq!(*net.nodes[i].status(), BftStatus::Decided(b"batch".to_vec()));
            assert_eq!(net.nodes[i].view(), 1);
        }
    }

    #[test]
    fn n7_two_crashes_still_decides() {
        let mut net = Net::new(7, 2, &[0, 1]);
        net.run(b"payload");
        for i in 2..7 {
            assert_eq!(*net.nodes[i].status(), BftStatus::Decided(b"payload".to_vec()));
        }
    }

    #[test]
    fn more_than_f_crashes_never_decides_but_stays_safe() {
        let mut net = Net::new(4, 1, &[0, 1]);
        net.run(b"batch");
        assert!(net.decided_values().is_empty());
        for i in 2..4 {
            assert_ne!(*net.nodes[i].status(), BftStatus::Decided(b"batch".to_vec()));
        }
    }

    #[test]
    fn equivocating_leader_cannot_split_decision() {
        // Leader 0 sends different proposals to different nodes; no quorum
        // can form on either, and the next view converges on one value.
        let n = 4;
        let mut nodes: Vec<BftInstance> = (0..n).map(|i| BftInstance::new(i, n, 1)).collect();
        for node in nodes.iter_mut().skip(1) {
            node.start(b"honest".to_vec());
        }
        let mut queue: VecDeque<(usize, BftMessage)> = VecDeque::new();
        // Equivocation: node 1 sees "aa", nodes 2 and 3 see "bb".
        nodes[1].handle_message(0, BftMessage::PrePrepare { view: 0, proposal: b"aa".to_vec() });
        for i in 2..4 {
            let actions = nodes[i].handle_message(
                0,
                BftMessage::PrePrepare { view: 0, proposal: b"bb".to_vec() },
            );
            for action in actions {
                if let BftAction::Broadcast(msg) = action {
                    queue.push_back((i, msg));
                }
            }
        }
        // Deliver, then force view changes until terminal.
        for _ in 0..2 * n {
            while let Some((from, msg)) = queue.pop_front() {
                for i in 1..4 {
                    let actions = nodes[i].handle_message(from, msg.clone());
                    for action in actions {
                        if let BftAction::Broadcast(m) = action {
                            queue.push_back((i, m));
                        }
                    }
                }
            }
            let undecided =
                (1..4).any(|i| *nodes[i].status() == BftStatus::Running);
            if !undecided {
                break;
            }
            for i in 1..4 {
                let actions = nodes[i].on_timeout();
                for action in actions {
                    if let BftAction::Broadcast(m) = action {
                        queue.push_back((i, m));
                    }
                }
            }
        }
        let decided: BTreeSet<Vec<u8>> = nodes[1..]
            .iter()
            .filter_map(|node| match node.status() {
                BftStatus::Decided(v) => Some(v.clone()),
                _ => None,
            })
            .collect();
        assert!(decided.len() <= 1, "agreement violated: {decided:?}");
    }

    #[test]
    fn aborts_after_n_failed_views() {
        // Only 2 of 4 nodes live: view changes can reach quorum never, so
        // no entry happens; with 3 live but leader-side drops the instance
        // cycles views. Simulate by voting view changes directly.
        let mut node = BftInstance::new(3, 4, 1);
        node.start(b"x".to_vec());
        let mut aborted = false;
        for new_view in 1..=4u64 {
            for from in 0..3 {
                let actions = node.handle_message(
                    from,
                    BftMessage::ViewChange { new_view, prepared: None },
                );
                if actions.contains(&BftAction::Aborted) {
                    aborted = true;
                }
            }
        }
        assert!(aborted);
        assert_eq!(*node.status(), BftStatus::Aborted);
    }
}
