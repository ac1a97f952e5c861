//! In-process agent bus with speech-act performatives.
//!
//! `tell` adds the content to the receiver's belief base (annotated with the
//! sender) and triggers a matching plan; `achieve` only triggers a plan. Beliefs
//! are never retracted while the bus lives. Delivery is FIFO and every plan
//! runs to completion before the next delivery, so runs are deterministic.

mod bus;
mod literal;

pub use bus::{
    AgentId, BeliefBase, Bus, BusConfig, BusError, Message, MessageTrace, Performative, Plan,
    PlanContext, Trigger, DEFAULT_MAX_MESSAGES,
};
pub use literal::{Literal, LiteralError, Pattern, Term};
