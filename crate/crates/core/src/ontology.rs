//! Type hierarchy and argument inventory for DMR graphs.
//!
//! An ontology is written in a small line-oriented language:
//!
//! ```text
//! # comment
//! Intent <- OrderIntent | PaymentIntent
//! Entity <- FoodItem | DrinkItem | Size
//! FoodItem <- Pizza | Burger
//! OrderIntent.order-item -> FoodItem | DrinkItem
//! Entity.mod -> Size
//! ```
//!
//! Hierarchy lines declare children of an existing type, argument lines
//! attach an edge label with its admissible target types to a type. Derived
//! types inherit every argument of their ancestors and may redeclare a label
//! to override it. Lines may appear in any order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

pub const INTENT: &str = "Intent";
pub const ENTITY: &str = "Entity";
pub const AND: &str = "and";
pub const OR: &str = "or";
pub const REFERENCE: &str = "reference";
/// The negation keyword.
pub const NEGATIVE: &str = "-";

pub const MOD: &str = "mod";
pub const QUANT: &str = "quant";
pub const POLARITY: &str = "polarity";
pub const REFER: &str = "refer";

/// The ontology shipped for the fast-food ordering domain.
pub const FASTFOOD_SOURCE: &str = include_str!("../data/fastfood.dmr-ont");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OntologyError {
    #[error("syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate type `{name}` at line {line}")]
    DuplicateType { name: String, line: usize },
    #[error("unknown parent `{name}` at line {line}")]
    UnknownParent { name: String, line: usize },
    #[error("unknown type `{name}` at line {line}")]
    UnknownType { name: String, line: usize },
    #[error("unknown target type `{name}` at line {line}")]
    UnknownTarget { name: String, line: usize },
    #[error("cycle/root violation at line {line}: {msg}")]
    Hierarchy { line: usize, msg: String },
    #[error("type `{0}` is not declared")]
    NotDeclared(String),
}

/// Which root a declared type descends from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Intent,
    Entity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArgSpec {
    pub edge_label: String,
    pub allowed_targets: BTreeSet<String>,
    pub allows_keyword: Option<String>,
}

impl ArgSpec {
    fn new(label: &str) -> Self {
        ArgSpec {
            edge_label: label.to_string(),
            allowed_targets: BTreeSet::new(),
            allows_keyword: None,
        }
    }

    fn merge(&mut self, other: &ArgSpec) {
        self.allowed_targets
            .extend(other.allowed_targets.iter().cloned());
        if self.allows_keyword.is_none() {
            self.allows_keyword = other.allows_keyword.clone();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TypeDecl {
    pub name: String,
    pub parent: Option<String>,
    pub own_args: BTreeMap<String, ArgSpec>,
    /// Built-in argument labels not yet overridden by a source line.
    #[serde(skip)]
    defaults: BTreeSet<String>,
}

impl TypeDecl {
    fn root(name: &str) -> Self {
        TypeDecl {
            name: name.to_string(),
            parent: None,
            own_args: BTreeMap::new(),
            defaults: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    types: BTreeMap<String, TypeDecl>,
    intents: BTreeSet<String>,
    entities: BTreeSet<String>,
}

impl Default for Ontology {
    fn default() -> Self {
        let mut types = BTreeMap::new();
        types.insert(INTENT.to_string(), TypeDecl::root(INTENT));
        let mut entity = TypeDecl::root(ENTITY);
        for label in [MOD, QUANT] {
            let mut spec = ArgSpec::new(label);
            spec.allowed_targets.insert(ENTITY.to_string());
            entity.own_args.insert(label.to_string(), spec);
            entity.defaults.insert(label.to_string());
        }
        let mut polarity = ArgSpec::new(POLARITY);
        polarity.allows_keyword = Some(NEGATIVE.to_string());
        entity.own_args.insert(POLARITY.to_string(), polarity);
        entity.defaults.insert(POLARITY.to_string());
        types.insert(ENTITY.to_string(), entity);
        Ontology {
            types,
            intents: [INTENT.to_string()].into(),
            entities: [ENTITY.to_string()].into(),
        }
    }
}

/// Operators and keywords every ontology provides.
pub fn builtins() -> [&'static str; 4] {
    [AND, OR, REFERENCE, NEGATIVE]
}

pub fn is_operator(name: &str) -> bool {
    matches!(name, AND | OR | REFERENCE)
}

fn is_type_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Edge labels are lowercase identifiers that may contain digits and hyphens.
pub fn is_edge_label(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
}

/// Parses `op<N>` labels used under `and`/`or`.
pub fn op_index(label: &str) -> Option<usize> {
    label
        .strip_prefix("op")
        .filter(|n| !n.is_empty() && !n.starts_with('0'))
        .and_then(|n| n.parse().ok())
}

pub fn parse_ontology(text: &str) -> Result<Ontology, OntologyError> {
    let mut hierarchy: Vec<(usize, String, Vec<String>)> = Vec::new();
    let mut arguments: Vec<(usize, String, String, Vec<String>)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let syntax = |msg: &str| OntologyError::Syntax {
            line,
            msg: msg.to_string(),
        };
        if let Some((lhs, rhs)) = content.split_once("<-") {
            let parent = lhs.trim();
            if !is_type_name(parent) {
                return Err(syntax("expected a type name before `<-`"));
            }
            let children = split_alternatives(rhs);
            if children.is_empty() || !children.iter().all(|c| is_type_name(c)) {
                return Err(syntax("expected `Child | Child ...` after `<-`"));
            }
            hierarchy.push((line, parent.to_string(), children));
        } else if let Some((lhs, rhs)) = content.split_once("->") {
            let (ty, label) = lhs
                .trim()
                .split_once('.')
                .ok_or_else(|| syntax("expected `Type.edge-label` before `->`"))?;
            let (ty, label) = (ty.trim(), label.trim());
            if !is_type_name(ty) {
                return Err(syntax("expected a type name before `.`"));
            }
            if !is_edge_label(label) {
                return Err(syntax(&format!("invalid edge label `{label}`")));
            }
            let targets = split_alternatives(rhs);
            if targets.is_empty() {
                return Err(syntax("expected at least one target after `->`"));
            }
            arguments.push((line, ty.to_string(), label.to_string(), targets));
        } else {
            return Err(syntax("expected `<-` or `->`"));
        }
    }

    let mut ontology = Ontology::default();

    // child -> (parent, line)
    let mut declared: BTreeMap<String, (String, usize)> = BTreeMap::new();
    for (line, parent, children) in &hierarchy {
        for child in children {
            if child == INTENT || child == ENTITY {
                return Err(OntologyError::Hierarchy {
                    line: *line,
                    msg: format!("root type `{child}` cannot be given a parent"),
                });
            }
            if is_operator(child) || declared.contains_key(child) {
                return Err(OntologyError::DuplicateType {
                    name: child.clone(),
                    line: *line,
                });
            }
            declared.insert(child.clone(), (parent.clone(), *line));
        }
    }
    for (line, parent, _) in &hierarchy {
        if parent != INTENT && parent != ENTITY && !declared.contains_key(parent) {
            return Err(OntologyError::UnknownParent {
                name: parent.clone(),
                line: *line,
            });
        }
    }
    // Every chain must end at a root; anything else loops.
    let mut by_line: Vec<(&String, &(String, usize))> = declared.iter().collect();
    by_line.sort_by_key(|(_, (_, line))| *line);
    for (name, (_, line)) in &by_line {
        let mut seen = BTreeSet::new();
        let mut cur: &str = name;
        while let Some((parent, _)) = declared.get(cur) {
            if !seen.insert(cur) {
                return Err(OntologyError::Hierarchy {
                    line: *line,
                    msg: format!("`{name}` is its own ancestor"),
                });
            }
            cur = parent;
        }
    }
    for (name, (parent, _)) in &by_line {
        let mut decl = TypeDecl::root(name);
        decl.parent = Some(parent.clone());
        ontology.types.insert((*name).clone(), decl);
    }
    let names: Vec<String> = ontology.types.keys().cloned().collect();
    for name in names {
        match ontology.root_of(&name) {
            Some(Category::Intent) => ontology.intents.insert(name),
            Some(Category::Entity) => ontology.entities.insert(name),
            None => unreachable!("cycles rejected above"),
        };
    }

    for (line, ty, label, targets) in arguments {
        if !ontology.types.contains_key(&ty) {
            return Err(OntologyError::UnknownType { name: ty, line });
        }
        let mut spec = ArgSpec::new(&label);
        for target in targets {
            if target == NEGATIVE {
                spec.allows_keyword = Some(target);
            } else if ontology.types.contains_key(&target) {
                spec.allowed_targets.insert(target);
            } else {
                return Err(OntologyError::UnknownTarget { name: target, line });
            }
        }
        let decl = ontology.types.get_mut(&ty).expect("checked above");
        if decl.defaults.remove(&label) {
            decl.own_args.insert(label, spec);
        } else {
            decl.own_args
                .entry(label)
                .and_modify(|s| s.merge(&spec))
                .or_insert(spec);
        }
    }
    Ok(ontology)
}

fn split_alternatives(s: &str) -> Vec<String> {
    s.split('|')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

impl Ontology {
    pub fn fastfood() -> Self {
        parse_ontology(FASTFOOD_SOURCE).expect("bundled ontology parses")
    }

    pub fn contains(&self, name: &str) -> bool {
        self.types.contains_key(name)
    }

    pub fn decl(&self, name: &str) -> Option<&TypeDecl> {
        self.types.get(name)
    }

    pub fn types(&self) -> impl Iterator<Item = &TypeDecl> {
        self.types.values()
    }

    pub fn intents(&self) -> &BTreeSet<String> {
        &self.intents
    }

    pub fn entities(&self) -> &BTreeSet<String> {
        &self.entities
    }

    pub fn category(&self, name: &str) -> Option<Category> {
        if self.intents.contains(name) {
            Some(Category::Intent)
        } else if self.entities.contains(name) {
            Some(Category::Entity)
        } else {
            None
        }
    }

    pub fn is_intent(&self, name: &str) -> bool {
        self.intents.contains(name)
    }

    pub fn is_entity(&self, name: &str) -> bool {
        self.entities.contains(name)
    }

    fn root_of(&self, name: &str) -> Option<Category> {
        let mut cur = self.types.get(name)?;
        while let Some(parent) = &cur.parent {
            cur = self.types.get(parent)?;
        }
        match cur.name.as_str() {
            INTENT => Some(Category::Intent),
            ENTITY => Some(Category::Entity),
            _ => None,
        }
    }

    /// Chain from `name` up to its root, `name` first.
    pub fn ancestors(&self, name: &str) -> Result<Vec<&str>, OntologyError> {
        let mut cur = self
            .types
            .get(name)
            .ok_or_else(|| OntologyError::NotDeclared(name.to_string()))?;
        let mut chain = vec![cur.name.as_str()];
        while let Some(parent) = &cur.parent {
            cur = &self.types[parent];
            chain.push(cur.name.as_str());
        }
        Ok(chain)
    }

    /// Reflexive ancestor test.
    pub fn is_subtype(&self, child: &str, ancestor: &str) -> Result<bool, OntologyError> {
        if !self.contains(ancestor) {
            return Err(OntologyError::NotDeclared(ancestor.to_string()));
        }
        Ok(self.ancestors(child)?.contains(&ancestor))
    }

    /// Arguments of `name` after inheritance; the nearest declaration of a label wins.
    pub fn resolve_arguments(
        &self,
        name: &str,
    ) -> Result<BTreeMap<String, ArgSpec>, OntologyError> {
        let chain = self.ancestors(name)?;
        let mut args = BTreeMap::new();
        for ty in chain.iter().rev() {
            for (label, spec) in &self.types[*ty].own_args {
                args.insert(label.clone(), spec.clone());
            }
        }
        Ok(args)
    }

    /// True when a node of type `ty` satisfies one of the argument's targets.
    pub fn admits_type(&self, spec: &ArgSpec, ty: &str) -> bool {
        match self.ancestors(ty) {
            Ok(chain) => chain.iter().any(|a| spec.allowed_targets.contains(*a)),
            Err(_) => false,
        }
    }

    /// True when some target of the argument is an entity type, which is what
    /// makes a `reference` node admissible there.
    pub fn admits_entities(&self, spec: &ArgSpec) -> bool {
        spec.allowed_targets.iter().any(|t| self.is_entity(t))
    }

    /// Union of every entity type's resolved arguments. Reference nodes stand
    /// in for an entity of unknown type and are checked against this.
    pub fn entity_argument_union(&self) -> BTreeMap<String, ArgSpec> {
        let mut union: BTreeMap<String, ArgSpec> = BTreeMap::new();
        for name in &self.entities {
            for (label, spec) in self.resolve_arguments(name).unwrap_or_default() {
                union
                    .entry(label)
                    .and_modify(|s| s.merge(&spec))
                    .or_insert(spec);
            }
        }
        union
    }

    /// Writes the ontology back in the source language.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for decl in self.types.values() {
            if let Some(parent) = &decl.parent {
                children.entry(parent).or_default().push(&decl.name);
            }
        }
        let mut queue: Vec<&str> = vec![INTENT, ENTITY];
        let mut i = 0;
        while i < queue.len() {
            let parent = queue[i];
            if let Some(kids) = children.get(parent) {
                let _ = writeln!(out, "{parent} <- {}", kids.join(" | "));
                queue.extend(kids.iter().copied());
            }
            i += 1;
        }
        for ty in &queue {
            let decl = &self.types[*ty];
            for (label, spec) in &decl.own_args {
                if decl.defaults.contains(label) {
                    continue;
                }
                let mut targets: Vec<&str> =
                    spec.allowed_targets.iter().map(String::as_str).collect();
                if let Some(k) = &spec.allows_keyword {
                    targets.push(k);
                }
                let _ = writeln!(out, "{ty}.{label} -> {}", targets.join(" | "));
            }
        }
        out
    }
}
