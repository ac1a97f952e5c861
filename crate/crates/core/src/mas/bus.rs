use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::literal::{Literal, Pattern};

/// Default cap on deliveries per [`Bus::dispatch_until_quiescent`] call.
pub const DEFAULT_MAX_MESSAGES: usize = 10_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BusError {
    #[error("unknown agent `{0}`")]
    UnknownAgent(AgentId),
    #[error("agent `{0}` is already registered")]
    DuplicateAgent(AgentId),
    #[error("agent `{0}` cannot send a point-to-point message to itself")]
    SelfSend(AgentId),
    #[error("no quiescence after {0} deliveries")]
    NonTermination(usize),
    #[error("plan `{functor}` of `{agent}` failed: {message}")]
    PlanFailed {
        agent: AgentId,
        functor: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub const INTERFACE: &'static str = "ag_interface";
    pub const SUPPORT: &'static str = "ag_support";
    pub const MODELLING: &'static str = "ag_modelling";
    pub const STUDENT: &'static str = "ag_student";
    pub const MATERIAL: &'static str = "ag_material";

    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn interface() -> Self {
        Self::new(Self::INTERFACE)
    }

    pub fn support() -> Self {
        Self::new(Self::SUPPORT)
    }

    pub fn modelling() -> Self {
        Self::new(Self::MODELLING)
    }

    pub fn student() -> Self {
        Self::new(Self::STUDENT)
    }

    pub fn material() -> Self {
        Self::new(Self::MATERIAL)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Performative {
    Tell,
    Achieve,
    AskOne,
    BroadcastTell,
}

impl Performative {
    pub fn as_str(self) -> &'static str {
        match self {
            Performative::Tell => "tell",
            Performative::Achieve => "achieve",
            Performative::AskOne => "ask_one",
            Performative::BroadcastTell => "broadcast_tell",
        }
    }

    /// Whether delivery adds the content to the receiver's beliefs.
    fn forms_belief(self) -> bool {
        matches!(self, Performative::Tell | Performative::BroadcastTell)
    }
}

impl fmt::Display for Performative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u64,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub performative: Performative,
    pub content: Literal,
}

impl fmt::Display for Message {
    /// `seq|sender|performative|receiver|literal`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}|{}|{}|{}",
            self.seq, self.sender, self.performative, self.receiver, self.content
        )
    }
}

/// Delivered messages in delivery order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageTrace(pub Vec<Message>);

impl MessageTrace {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Message> {
        self.0.iter()
    }

    /// One newline-terminated line per delivery.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.0 {
            let _ = writeln!(out, "{m}");
        }
        out
    }
}

/// Insertion-ordered set of source-annotated literals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefBase {
    beliefs: Vec<Literal>,
}

impl BeliefBase {
    /// Returns false when the literal (with the same source) was already present.
    fn add(&mut self, lit: Literal) -> bool {
        if self.beliefs.contains(&lit) {
            return false;
        }
        self.beliefs.push(lit);
        true
    }

    pub fn contains(&self, lit: &Literal) -> bool {
        self.beliefs.contains(lit)
    }

    /// Oldest belief matching the pattern.
    pub fn first_match(&self, pattern: &Pattern) -> Option<&Literal> {
        self.beliefs.iter().find(|b| pattern.matches(b))
    }

    pub fn matching<'a>(&'a self, pattern: &'a Pattern) -> impl Iterator<Item = &'a Literal> + 'a {
        self.beliefs.iter().filter(move |b| pattern.matches(b))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Literal> {
        self.beliefs.iter()
    }

    pub fn len(&self) -> usize {
        self.beliefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beliefs.is_empty()
    }
}

/// Which deliveries a plan reacts to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    /// `tell` and `broadcast_tell`.
    Tell,
    Achieve,
}

impl Trigger {
    fn fires_on(self, p: Performative) -> bool {
        match self {
            Trigger::Tell => p.forms_belief(),
            Trigger::Achieve => p == Performative::Achieve,
        }
    }
}

type Guard = Box<dyn Fn(&BeliefBase, &Message) -> bool + Send>;
type Handler = Box<dyn FnMut(&mut PlanContext<'_>, &Message) -> Result<(), String> + Send>;

/// Reactive plan: `(trigger, functor, guard) -> handler`.
pub struct Plan {
    trigger: Trigger,
    functor: String,
    guard: Guard,
    handler: Handler,
}

impl Plan {
    pub fn new<H>(trigger: Trigger, functor: impl Into<String>, handler: H) -> Self
    where
        H: FnMut(&mut PlanContext<'_>, &Message) -> Result<(), String> + Send + 'static,
    {
        Self {
            trigger,
            functor: functor.into(),
            guard: Box::new(|_, _| true),
            handler: Box::new(handler),
        }
    }

    /// Adds a context condition evaluated against the receiver's beliefs.
    pub fn with_guard<G>(mut self, guard: G) -> Self
    where
        G: Fn(&BeliefBase, &Message) -> bool + Send + 'static,
    {
        self.guard = Box::new(guard);
        self
    }
}

impl fmt::Debug for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Plan")
            .field("trigger", &self.trigger)
            .field("functor", &self.functor)
            .finish_non_exhaustive()
    }
}

/// What a running plan can see and do. Outgoing messages are enqueued once
/// the plan returns.
pub struct PlanContext<'a> {
    me: &'a AgentId,
    beliefs: &'a BeliefBase,
    agents: &'a [AgentId],
    outbox: Vec<(AgentId, Performative, Literal)>,
}

impl PlanContext<'_> {
    pub fn me(&self) -> &AgentId {
        self.me
    }

    pub fn beliefs(&self) -> &BeliefBase {
        self.beliefs
    }

    pub fn send(&mut self, to: AgentId, performative: Performative, content: Literal) {
        self.outbox.push((to, performative, content));
    }

    pub fn broadcast(&mut self, content: Literal) {
        for a in self.agents {
            if a != self.me {
                self.outbox
                    .push((a.clone(), Performative::BroadcastTell, content.clone()));
            }
        }
    }
}

#[derive(Debug)]
struct Agent {
    id: AgentId,
    beliefs: BeliefBase,
    plans: Vec<Plan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusConfig {
    pub max_messages: usize,
}

impl Default for BusConfig {
    fn default() -> Self {
        Self {
            max_messages: DEFAULT_MAX_MESSAGES,
        }
    }
}

/// Single-threaded FIFO message bus with run-to-completion plan execution.
#[derive(Debug, Default)]
pub struct Bus {
    config: BusConfig,
    agents: Vec<Agent>,
    order: Vec<AgentId>,
    index: HashMap<AgentId, usize>,
    queue: VecDeque<Message>,
    next_seq: u64,
    history: Vec<Message>,
}

impl Bus {
    pub fn new(config: BusConfig) -> Self {
        Self {
            config,
            next_seq: 1,
            ..Self::default()
        }
    }

    pub fn register(&mut self, id: AgentId) -> Result<(), BusError> {
        if self.index.contains_key(&id) {
            return Err(BusError::DuplicateAgent(id));
        }
        self.index.insert(id.clone(), self.agents.len());
        self.order.push(id.clone());
        self.agents.push(Agent {
            id,
            beliefs: BeliefBase::default(),
            plans: Vec::new(),
        });
        Ok(())
    }

    pub fn add_plan(&mut self, agent: &AgentId, plan: Plan) -> Result<(), BusError> {
        let i = self.agent_index(agent)?;
        self.agents[i].plans.push(plan);
        Ok(())
    }

    /// Seeds an initial belief (source `self`).
    pub fn seed_belief(&mut self, agent: &AgentId, lit: Literal) -> Result<(), BusError> {
        let i = self.agent_index(agent)?;
        let lit = lit.with_source(AgentId::new("self"));
        self.agents[i].beliefs.add(lit);
        Ok(())
    }

    pub fn agents(&self) -> &[AgentId] {
        &self.order
    }

    pub fn beliefs(&self, agent: &AgentId) -> Result<&BeliefBase, BusError> {
        Ok(&self.agents[self.agent_index(agent)?].beliefs)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Every message delivered on this bus so far.
    pub fn history(&self) -> MessageTrace {
        MessageTrace(self.history.clone())
    }

    fn agent_index(&self, id: &AgentId) -> Result<usize, BusError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| BusError::UnknownAgent(id.clone()))
    }

    fn enqueue(&mut self, sender: AgentId, receiver: AgentId, performative: Performative, content: Literal) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push_back(Message {
            seq,
            sender,
            receiver,
            performative,
            content,
        });
    }

    /// Enqueues a point-to-point message.
    pub fn send(
        &mut self,
        sender: &AgentId,
        receiver: &AgentId,
        performative: Performative,
        content: Literal,
    ) -> Result<(), BusError> {
        self.agent_index(sender)?;
        self.agent_index(receiver)?;
        if sender == receiver {
            return Err(BusError::SelfSend(sender.clone()));
        }
        if performative == Performative::AskOne {
            // ask_one is answered synchronously by [`Bus::ask_one`]
            return Err(BusError::PlanFailed {
                agent: sender.clone(),
                functor: content.functor,
                message: "ask_one is not a queued performative".into(),
            });
        }
        self.enqueue(sender.clone(), receiver.clone(), performative, content);
        Ok(())
    }

    /// Tell to every other registered agent, in registration order.
    pub fn broadcast(&mut self, sender: &AgentId, content: Literal) -> Result<(), BusError> {
        self.agent_index(sender)?;
        let receivers: Vec<AgentId> = self.order.iter().filter(|a| *a != sender).cloned().collect();
        for r in receivers {
            self.enqueue(sender.clone(), r, Performative::BroadcastTell, content.clone());
        }
        Ok(())
    }

    /// First (oldest) belief of `target` matching `query`.
    pub fn ask_one(
        &self,
        asker: &AgentId,
        target: &AgentId,
        query: &Pattern,
    ) -> Result<Option<Literal>, BusError> {
        self.agent_index(asker)?;
        let t = self.agent_index(target)?;
        Ok(self.agents[t].beliefs.first_match(query).cloned())
    }

    /// Delivers the next queued message, running at most one plan.
    pub fn step(&mut self) -> Result<Option<Message>, BusError> {
        let Some(msg) = self.queue.pop_front() else {
            return Ok(None);
        };
        let i = self.agent_index(&msg.receiver)?;
        let agent = &mut self.agents[i];
        if msg.performative.forms_belief() {
            agent
                .beliefs
                .add(msg.content.clone().with_source(msg.sender.clone()));
        }

        let beliefs = &agent.beliefs;
        let plan = agent.plans.iter_mut().find(|p| {
            p.trigger.fires_on(msg.performative)
                && p.functor == msg.content.functor
                && (p.guard)(beliefs, &msg)
        });
        let mut outbox = Vec::new();
        if let Some(plan) = plan {
            let mut ctx = PlanContext {
                me: &agent.id,
                beliefs,
                agents: &self.order,
                outbox: Vec::new(),
            };
            (plan.handler)(&mut ctx, &msg).map_err(|message| BusError::PlanFailed {
                agent: agent.id.clone(),
                functor: msg.content.functor.clone(),
                message,
            })?;
            outbox = ctx.outbox;
        }
        let me = agent.id.clone();
        for (to, perf, content) in outbox {
            if to == me {
                return Err(BusError::SelfSend(me));
            }
            self.agent_index(&to)?;
            self.enqueue(me.clone(), to, perf, content);
        }
        self.history.push(msg.clone());
        Ok(Some(msg))
    }

    /// Drains the queue FIFO, returning what was delivered in this call.
    pub fn dispatch_until_quiescent(&mut self) -> Result<MessageTrace, BusError> {
        let mut delivered = Vec::new();
        while !self.queue.is_empty() {
            if delivered.len() >= self.config.max_messages {
                return Err(BusError::NonTermination(delivered.len()));
            }
            if let Some(m) = self.step()? {
                delivered.push(m);
            }
        }
        Ok(MessageTrace(delivered))
    }
}
