//! Compute contract: stores predefined analysis tasks and their
//! threshold-attested results.

use std::collections::BTreeMap;

use crate::crypto::{
    verify_aggregate_same_message, Address, AggregateProof, AggregateRegistry, BilinearEngine,
};
use crate::simchain::{CallCtx, Contract, ContractError, EventKind};
use crate::wire::{Reader, Writer, WireError};

/// Predefined task codes.
pub const TASK_ACCOUNT_ACTIVITY: u8 = 1;
pub const TASK_BALANCE_AT: u8 = 2;

pub fn kind_registered(kind: u8) -> bool {
    matches!(kind, TASK_ACCOUNT_ACTIVITY | TASK_BALANCE_AT)
}

/// task_k: a predefined on-chain-data analysis job over a height window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComputeTask {
    pub task_id: u64,
    pub kind: u8,
    pub target_account: Address,
    pub from_height: u64,
    pub to_height: u64,
    pub sources: Vec<String>,
}

impl ComputeTask {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u64(self.task_id);
        w.put_u8(self.kind);
        w.put_str(&self.target_account);
        w.put_u64(self.from_height);
        w.put_u64(self.to_height);
        w.put_u32(self.sources.len() as u32);
        for chain in &self.sources {
            w.put_str(chain);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let task_id = r.get_u64()?;
        let kind = r.get_u8()?;
        let target_account = r.get_str()?;
        let from_height = r.get_u64()?;
        let to_height = r.get_u64()?;
        let source_count = r.get_u32()? as usize;
        let mut sources = Vec::with_capacity(source_count);
        for _ in 0..source_count {
            sources.push(r.get_str()?);
        }
        r.finish()?;
        Ok(Self {
            task_id,
            kind,
            target_account,
            from_height,
            to_height,
            sources,
        })
    }
}

/// result_k (CPBS): task id plus the deterministic output payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskResult {
    pub task_id: u64,
    pub payload: Vec<u8>,
}

impl TaskResult {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u64(self.task_id);
        w.put_bytes(&self.payload);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let task_id = r.get_u64()?;
        let payload = r.get_bytes()?;
        r.finish()?;
        Ok(Self { task_id, payload })
    }
}

pub fn task_attest_message(result_bytes: &[u8]) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_str("task-result");
    w.put_bytes(result_bytes);
    w.into_bytes()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRecord {
    pub task_bytes: Vec<u8>,
    pub result: Option<Vec<u8>>,
}

#[derive(Clone)]
pub struct ComputeContract<E: BilinearEngine> {
    registry: AggregateRegistry<E>,
    quorum: usize,
    tasks: BTreeMap<u64, TaskRecord>,
}

impl<E: BilinearEngine> ComputeContract<E> {
    pub fn new(registry: AggregateRegistry<E>, quorum: usize) -> Self {
        Self {
            registry,
            quorum,
            tasks: BTreeMap::new(),
        }
    }

    pub fn task(&self, task_id: u64) -> Option<&TaskRecord> {
        self.tasks.get(&task_id)
    }

    fn submit_task(&mut self, args: &[u8]) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError> {
        let task = ComputeTask::from_bytes(args)?;
        if !kind_registered(task.kind) {
            return Err(ContractError::rejected("unknown task kind"));
        }
        if task.from_height > task.to_height {
            return Err(ContractError::rejected("empty task window"));
        }
        if self.tasks.contains_key(&task.task_id) {
            return Err(ContractError::rejected("duplicate task_id"));
        }
        self.tasks.insert(
            task.task_id,
            TaskRecord {
                task_bytes: args.to_vec(),
                result: None,
            },
        );
        Ok(vec![(EventKind::Request, args.to_vec())])
    }

    fn task_callback(
        &mut self,
        args: &[u8],
    ) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError> {
        let mut r = Reader::new(args);
        let result_bytes = r.get_bytes()?;
        let proof_bytes = r.get_bytes()?;
        r.finish()?;
        let result = TaskResult::from_bytes(&result_bytes)?;
        let record = self
            .tasks
            .get_mut(&result.task_id)
            .ok_or_else(|| ContractError::rejected("unknown task_id"))?;
        if record.result.is_some() {
            return Err(ContractError::rejected("task already completed"));
        }
        let proof = AggregateProof::<E>::from_bytes(&proof_bytes)
            .map_err(|_| ContractError::rejected("malformed attestation proof"))?;
        let ok = verify_aggregate_same_message(
            &proof,
            &self.registry,
            &task_attest_message(&result_bytes),
            self.quorum,
        )
        .map_err(|_| ContractError::rejected("attestation mask length"))?;
        if !ok {
            return Err(ContractError::rejected("attestation verification failed"));
        }
        record.result = Some(result_bytes.clone());
        Ok(vec![(EventKind::Callback, result_bytes)])
    }
}

impl<E: BilinearEngine> Contract<E> for ComputeContract<E> {
    fn call(
        &mut self,
        _ctx: &mut CallCtx<'_>,
        method: &str,
        args: &[u8],
    ) -> Result<Vec<(EventKind, Vec<u8>)>, ContractError> {
        match method {
            "submit_task" => self.submit_task(args),
            "task_callback" => self.task_callback(args),
            other => Err(ContractError::UnknownMethod(other.to_string())),
        }
    }

    fn query(&self, key: &str) -> Option<Vec<u8>> {
        if let Some(id) = key.strip_prefix("task:") {
            let id: u64 = id.parse().ok()?;
            return self.tasks.get(&id).map(|t| t.task_bytes.clone());
        }
        if let Some(id) = key.strip_prefix("result:") {
            let id: u64 = id.parse().ok()?;
            return self.tasks.get(&id).and_then(|t| t.result.clone());
        }
        None
    }

    fn state_entries(&self) -> Vec<(String, Vec<u8>)> {
        let mut entries = Vec::new();
        for (id, record) in &self.tasks {
            entries.push((format!("task:{id}"), record.task_bytes.clone()));
            if let Some(result) = &record.result {
                entries.push((format!("result:{id}"), result.clone()));
            }
        }
        entries
    }

    fn clone_box(&self) -> Box<dyn Contract<E>> {
        Box::new(self.clone())
    }
}
