//! Id-keyed JSON form of a message profile.
//!
//! Each agent maps to blocks `y`, `n[neighbor][link]`, `q[neighbor]` and
//! `p[link]`; multicast adds `p2`, `s`, `w`, `z1`, `z2`, `a1`, `a2`. In the
//! multicast form `p` holds p¹.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::instance::IndexSets;

use super::{Coord, Mechanism, Profile};

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("expected a JSON object at `{0}`")]
    NotObject(String),
    #[error("unknown agent `{0}` in profile")]
    UnknownAgent(String),
    #[error("agent `{0}` missing from profile")]
    MissingAgent(String),
    #[error("agent `{agent}`: missing entry `{path}`")]
    Missing { agent: String, path: String },
    #[error("agent `{agent}`: entry `{path}` is not a finite number")]
    NotNumber { agent: String, path: String },
    #[error("agent `{agent}`: {found} entries, expected {expected}")]
    Extra {
        agent: String,
        expected: usize,
        found: usize,
    },
}

fn path(coord: &Coord, sets: &IndexSets) -> Vec<String> {
    let a = |i: usize| sets.agent_ids[i].clone();
    let l = |k: usize| sets.link_ids[k].clone();
    match *coord {
        Coord::Demand => vec!["y".into()],
        Coord::Summary { via, link } => vec!["n".into(), a(via), l(link)],
        Coord::Proxy { of } => vec!["q".into(), a(of)],
        Coord::Price { link } | Coord::OwnPrice { link } => vec!["p".into(), l(link)],
        Coord::ProxyPrice { of, link } => vec!["p2".into(), a(of), l(link)],
        Coord::Share { link } => vec!["s".into(), l(link)],
        Coord::Weight { link } => vec!["w".into(), l(link)],
        Coord::MaxDemand { link } => vec!["z1".into(), l(link)],
        Coord::MaxCount { link } => vec!["z2".into(), l(link)],
        Coord::Offset { link } => vec!["a1".into(), l(link)],
        Coord::ProxyOffset { of, link } => vec!["a2".into(), a(of), l(link)],
    }
}

pub fn profile_to_json(game: &dyn Mechanism, profile: &Profile) -> Value {
    let sets = &game.topology().sets;
    let mut root = Map::new();
    for (i, msg) in profile.messages.iter().enumerate() {
        let mut agent = Map::new();
        for (coord, &v) in game.coords(i).iter().zip(msg) {
            let keys = path(coord, sets);
            let mut node = &mut agent;
            for k in &keys[..keys.len() - 1] {
                node = node
                    .entry(k.clone())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("intermediate nodes are objects");
            }
            node.insert(keys[keys.len() - 1].clone(), Value::from(v));
        }
        root.insert(sets.agent_ids[i].clone(), Value::Object(agent));
    }
    Value::Object(root)
}

fn count_leaves(v: &Value) -> usize {
    match v {
        Value::Object(m) => m.values().map(count_leaves).sum(),
        _ => 1,
    }
}

pub fn profile_from_json(game: &dyn Mechanism, value: &Value) -> Result<Profile, ProfileError> {
    let sets = &game.topology().sets;
    let root = value
        .as_object()
        .ok_or_else(|| ProfileError::NotObject("<root>".into()))?;
    for key in root.keys() {
        if sets.agent_index(key).is_none() {
            return Err(ProfileError::UnknownAgent(key.clone()));
        }
    }
    let mut messages = Vec::with_capacity(sets.n_agents());
    for (i, id) in sets.agent_ids.iter().enumerate() {
        let agent = root
            .get(id)
            .ok_or_else(|| ProfileError::MissingAgent(id.clone()))?;
        if !agent.is_object() {
            return Err(ProfileError::NotObject(id.clone()));
        }
        let coords = game.coords(i);
        let mut msg = Vec::with_capacity(coords.len());
        for coord in &coords {
            let keys = path(coord, sets);
            let joined = keys.join(".");
            let mut node = agent;
            for k in &keys {
                node = node.get(k).ok_or_else(|| ProfileError::Missing {
                    agent: id.clone(),
                    path: joined.clone(),
                })?;
            }
            let v =
                node.as_f64()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ProfileError::NotNumber {
                        agent: id.clone(),
                        path: joined.clone(),
                    })?;
            msg.push(v);
        }
        let found = count_leaves(agent);
        if found != coords.len() {
            return Err(ProfileError::Extra {
                agent: id.clone(),
                expected: coords.len(),
                found,
            });
        }
        messages.push(msg);
    }
    Ok(Profile { messages })
}
