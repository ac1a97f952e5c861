#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use prereq_core::mas::BusConfig;
use prereq_core::student_model::parse_timestamp;
use prereq_core::{
    ClassifyPolicy, Engine, EventLog, Recommendation, ScriptedClock, Session, StudentId,
};

pub const ONT: &str = include_str!("../../../../data/sql.ont");
pub const BANK: &str = include_str!("../../../../data/sql_bank.json");

/// Ask/answer instants of the recorded UPDATE session, in the order the clock is read.
pub const UPDATE_REPLAY_CLOCK: [&str; 8] = [
    "2015-11-03T11:08:54Z",
    "2015-11-03T11:09:27Z",
    "2015-11-03T11:11:31Z",
    "2015-11-03T11:12:10Z",
    "2015-11-03T11:09:27Z",
    "2015-11-03T11:12:10Z",
    "2015-11-03T11:12:10Z",
    "2015-11-03T11:14:14Z",
];

pub fn engine(policy: ClassifyPolicy) -> Arc<Engine> {
    Arc::new(Engine::from_texts(ONT, BANK, policy).unwrap())
}

pub fn scripted(instants: &[&str]) -> ScriptedClock {
    ScriptedClock::new(instants.iter().map(|s| parse_timestamp(s).unwrap()))
}

/// Runs a session to completion, answering with `answers` in order.
pub fn run_session(
    engine: Arc<Engine>,
    log_path: &Path,
    student: &str,
    desired: &str,
    clock: ScriptedClock,
    answers: &[&str],
) -> (Session, Recommendation) {
    let log = Arc::new(EventLog::new(log_path));
    let mut s = Session::start(
        engine,
        log,
        StudentId::new(student).unwrap(),
        desired,
        Box::new(clock),
        BusConfig::default(),
    )
    .unwrap();
    let mut answers = answers.iter();
    while s.next_question().unwrap().is_some() {
        s.submit_answer(answers.next().expect("script ran out of answers")).unwrap();
    }
    let rec = s.finalize().unwrap();
    (s, rec)
}

/// The recorded UPDATE session: every answer wrong, two attempts per leaf.
pub fn update_replay_session(log_path: &Path) -> (Session, Recommendation) {
    run_session(
        engine(ClassifyPolicy::default()),
        log_path,
        "s1",
        "UPDATE",
        scripted(&UPDATE_REPLAY_CLOCK),
        &["DELETE staff", "DELETE FROM staff", "DELETE staff WHERE", "DELETE FROM"],
    )
}

pub mod bus_script {
    use prereq_core::mas::{
        AgentId, Bus, BusConfig, Literal, Message, Performative, Plan, Term, Trigger,
    };
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    pub const AGENTS: usize = 4;

    #[derive(Debug, Clone)]
    pub enum Op {
        Tell(usize, usize, Literal),
        Achieve(usize, usize, Literal),
        Broadcast(usize, Literal),
        Step(usize),
    }

    fn agent(i: usize) -> AgentId {
        AgentId::new(format!("a{i}"))
    }

    /// Four agents: `ping` is answered with `pong`, `relay(n)` hops to the next
    /// agent until `n` reaches zero, `spread` broadcasts a fact.
    pub fn bus() -> Bus {
        let mut bus = Bus::new(BusConfig::default());
        for i in 0..AGENTS {
            bus.register(agent(i)).unwrap();
        }
        for i in 0..AGENTS {
            let me = agent(i);
            bus.add_plan(
                &me,
                Plan::new(Trigger::Tell, "ping", |ctx, msg| {
                    let lit = Literal::new("pong", msg.content.args.clone());
                    ctx.send(msg.sender.clone(), Performative::Tell, lit);
                    Ok(())
                }),
            )
            .unwrap();
            bus.add_plan(
                &me,
                Plan::new(Trigger::Achieve, "relay", move |ctx, msg| {
                    let n = msg.content.args[0].as_int().unwrap_or(0);
                    if n > 0 {
                        let next = agent((i + 1) % AGENTS);
                        ctx.send(next, Performative::Achieve, Literal::new("relay", vec![Term::Int(n - 1)]));
                    }
                    Ok(())
                }),
            )
            .unwrap();
            bus.add_plan(
                &me,
                Plan::new(Trigger::Achieve, "spread", move |ctx, _| {
                    ctx.broadcast(Literal::new("fact", vec![Term::atom(format!("a{i}"))]));
                    Ok(())
                }),
            )
            .unwrap();
        }
        bus
    }

    fn small_literal(rng: &mut StdRng, functors: &[&str]) -> Literal {
        let f = functors[rng.gen_range(0..functors.len())];
        Literal::new(f, vec![Term::Int(rng.gen_range(0..3))])
    }

    pub fn script(seed: u64) -> Vec<Op> {
        let mut rng = StdRng::seed_from_u64(seed);
        let len = rng.gen_range(1..30);
        (0..len)
            .map(|_| {
                let from = rng.gen_range(0..AGENTS);
                let to = (from + rng.gen_range(1..AGENTS)) % AGENTS;
                match rng.gen_range(0..4) {
                    0 => Op::Tell(from, to, small_literal(&mut rng, &["ping", "fact", "note"])),
                    1 => {
                        let lit = if rng.gen_bool(0.5) {
                            Literal::new("relay", vec![Term::Int(rng.gen_range(0..5))])
                        } else {
                            Literal::new("spread", vec![])
                        };
                        Op::Achieve(from, to, lit)
                    }
                    2 => Op::Broadcast(from, small_literal(&mut rng, &["fact", "note"])),
                    _ => Op::Step(rng.gen_range(1..4)),
                }
            })
            .collect()
    }

    fn snapshot(bus: &Bus) -> Vec<Vec<Literal>> {
        bus.agents()
            .iter()
            .map(|a| bus.beliefs(a).unwrap().iter().cloned().collect())
            .collect()
    }

    /// Checks one delivery against the belief semantics.
    fn check_step(before: &[Vec<Literal>], after: &[Vec<Literal>], msg: &Message) -> Result<(), String> {
        let r: usize = msg.receiver.as_str()[1..].parse().unwrap();
        for (i, (b, a)) in before.iter().zip(after).enumerate() {
            if i != r && b != a {
                return Err(format!("seq {}: bystander a{i} changed", msg.seq));
            }
        }
        let annotated = msg.content.clone().with_source(msg.sender.clone());
        match msg.performative {
            Performative::Tell | Performative::BroadcastTell => {
                if !after[r].contains(&annotated) {
                    return Err(format!("seq {}: told literal missing", msg.seq));
                }
                if before[r].contains(&annotated) && before[r] != after[r] {
                    return Err(format!("seq {}: repeated tell changed the belief base", msg.seq));
                }
                if !before[r].contains(&annotated) && after[r].len() != before[r].len() + 1 {
                    return Err(format!("seq {}: tell added more than one belief", msg.seq));
                }
            }
            Performative::Achieve | Performative::AskOne => {
                if before[r] != after[r] {
                    return Err(format!("seq {}: achieve mutated the belief base", msg.seq));
                }
            }
        }
        Ok(())
    }

    /// Runs a script, checking every delivery; returns the trace text and final beliefs.
    pub fn run(ops: &[Op]) -> Result<(String, Vec<Vec<Literal>>), String> {
        let mut bus = bus();
        let step = |bus: &mut Bus| -> Result<bool, String> {
            let before = snapshot(bus);
            match bus.step().map_err(|e| e.to_string())? {
                Some(msg) => {
                    check_step(&before, &snapshot(bus), &msg)?;
                    Ok(true)
                }
                None => Ok(false),
            }
        };
        for op in ops {
            match op {
                Op::Tell(f, t, l) => bus.send(&agent(*f), &agent(*t), Performative::Tell, l.clone()),
                Op::Achieve(f, t, l) => bus.send(&agent(*f), &agent(*t), Performative::Achieve, l.clone()),
                Op::Broadcast(f, l) => bus.broadcast(&agent(*f), l.clone()),
                Op::Step(n) => {
                    for _ in 0..*n {
                        step(&mut bus)?;
                    }
                    Ok(())
                }
            }
            .map_err(|e| e.to_string())?;
        }
        let mut guard = 0;
        while step(&mut bus)? {
            guard += 1;
            if guard > 10_000 {
                return Err("script did not quiesce".into());
            }
        }
        let trace = bus.history();
        for (i, m) in trace.iter().enumerate() {
            if m.seq != i as u64 + 1 {
                return Err(format!("seq gap: position {i} carries seq {}", m.seq));
            }
        }
        Ok((trace.to_text(), snapshot(&bus)))
    }

    /// Runs the script twice and demands byte-equal traces.
    pub fn check(seed: u64) -> Result<(), String> {
        let ops = script(seed);
        let first = run(&ops)?;
        let second = run(&ops)?;
        if first != second {
            return Err(format!("seed {seed}: runs diverged"));
        }
        Ok(())
    }
}
