//! On-chain protocol fixtures: the channel contract, the proxy contract
//! (source and destination roles), and the compute contract.

mod channel;
mod compute;
mod proxy;

pub use channel::{
    batch_digest, close_attest_message, close_channel_args, decode_batch, encode_batch,
    final_state_digest, open_channel_args, update_attest_message, update_channel_args,
    ChannelContract, ChannelRecord, OffChainTx,
};
pub use compute::{
    kind_registered, task_attest_message, ComputeContract, ComputeTask, TaskRecord, TaskResult,
    TASK_ACCOUNT_ACTIVITY, TASK_BALANCE_AT,
};
pub use proxy::{
    accept_attest_message, callback_attest_message, AcceptRecord, CrossChainRequest, CrossResult,
    PendingStatus, ProxyContract,
};

#[cfg(test)]
mod tests;
