//! Name-keyed registries for the engine's interchangeable strategies.

use std::sync::OnceLock;

use crate::coupling::{CouplingScheme, CropShareSource, FitOnCreate, FixedPoint, Prefitted, SinglePass};
use crate::error::{CoreError, Result};
use crate::water::{Allocator, PriorityGreedy, PrioritySequential};

pub struct Entry<T: ?Sized> {
    pub name: &'static str,
    pub description: &'static str,
    factory: fn() -> Box<T>,
}

/// Maps names to factories for one strategy kind.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<Entry<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds or replaces the entry called `name`.
    pub fn register(
        &mut self,
        name: &'static str,
        description: &'static str,
        factory: fn() -> Box<T>,
    ) -> &mut Self {
        self.entries.retain(|e| e.name != name);
        self.entries.push(Entry {
            name,
            description,
            factory,
        });
        self
    }

    pub fn create(&self, name: &str) -> Result<Box<T>> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| (e.factory)())
            .ok_or_else(|| CoreError::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }
}

pub fn coupling_schemes() -> &'static Registry<dyn CouplingScheme> {
    static R: OnceLock<Registry<dyn CouplingScheme>> = OnceLock::new();
    R.get_or_init(|| {
        let mut r: Registry<dyn CouplingScheme> = Registry::new("coupling");
        r.register(
            "fixed-point",
            "iterate the month until both links settle",
            || Box::new(FixedPoint),
        )
        .register(
            "single-pass",
            "one evaluation per month, links lagged from the previous month",
            || Box::new(SinglePass),
        );
        r
    })
}

pub fn allocators() -> &'static Registry<dyn Allocator> {
    static R: OnceLock<Registry<dyn Allocator>> = OnceLock::new();
    R.get_or_init(|| {
        let mut r: Registry<dyn Allocator> = Registry::new("allocator");
        r.register(
            "priority-greedy",
            "priority classes in order, equal priorities share proportionally",
            || Box::new(PriorityGreedy),
        )
        .register(
            "priority-sequential",
            "priority classes in order, equal priorities in declaration order",
            || Box::new(PrioritySequential),
        );
        r
    })
}

pub fn crop_share_sources() -> &'static Registry<dyn CropShareSource> {
    static R: OnceLock<Registry<dyn CropShareSource>> = OnceLock::new();
    R.get_or_init(|| {
        let mut r: Registry<dyn CropShareSource> = Registry::new("crop-share source");
        r.register("prefitted", "coefficients shipped with the dataset", || {
            Box::new(Prefitted)
        })
        .register(
            "fit-on-create",
            "fit coefficients from the dataset's share panel",
            || Box::new(FitOnCreate),
        );
        r
    })
}
