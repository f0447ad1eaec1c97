//! Named strategy registries.
//!
//! Every family of interchangeable algorithms in the crate (effective atom
//! number models, signal branches, steady-state solvers, atomic motion models,
//! Zeeman models, profile fit models, Poisson tail evaluators) sits behind a
//! trait object. Each family has a [`Registry`] that maps a stable name to a
//! factory, so configuration files and the command line can pick a variant
//! at runtime.

use crate::error::{Error, Result};

/// Factory signature: builds a boxed strategy from family-specific arguments.
pub type Factory<T, A> = fn(&A) -> Box<T>;

pub struct Entry<T: ?Sized, A> {
    pub name: &'static str,
    pub description: &'static str,
    factory: Factory<T, A>,
}

/// An ordered name → factory table for one strategy family.
pub struct Registry<T: ?Sized, A = ()> {
    kind: &'static str,
    default: &'static str,
    entries: Vec<Entry<T, A>>,
}

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(kind: &'static str, default: &'static str) -> Self {
        Registry {
            kind,
            default,
            entries: Vec::new(),
        }
    }

    /// Adds a strategy. Panics on duplicate names, which are programming errors.
    pub fn register(mut self, name: &'static str, description: &'static str, factory: Factory<T, A>) -> Self {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate {} strategy `{name}`",
            self.kind
        );
        self.entries.push(Entry {
            name,
            description,
            factory,
        });
        self
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }

    pub fn default_name(&self) -> &'static str {
        self.default
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|e| e.name)
    }

    pub fn entries(&self) -> &[Entry<T, A>] {
        &self.entries
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    /// Instantiates the strategy registered under `name`.
    pub fn build(&self, name: &str, args: &A) -> Result<Box<T>> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| (e.factory)(args))
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().collect::<Vec<_>>().join(", "),
            })
    }

    pub fn build_default(&self, args: &A) -> Box<T> {
        self.build(self.default, args)
            .expect("registry default must be registered")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Shape {
        fn sides(&self) -> u32;
    }
    struct Tri;
    struct Sq(u32);
    impl Shape for Tri {
        fn sides(&self) -> u32 {
            3
        }
    }
    impl Shape for Sq {
        fn sides(&self) -> u32 {
            self.0
        }
    }

    fn registry() -> Registry<dyn Shape, u32> {
        Registry::<dyn Shape, u32>::new("shape", "tri")
            .register("tri", "three", |_| Box::new(Tri))
            .register("sq", "four", |n| Box::new(Sq(*n)))
    }

    #[test]
    fn builds_by_name() {
        let r = registry();
        assert_eq!(r.build("sq", &4).unwrap().sides(), 4);
        assert_eq!(r.build_default(&0).sides(), 3);
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["tri", "sq"]);
    }

    #[test]
    fn unknown_name_lists_alternatives() {
        let err = registry().build("hex", &0).err().unwrap();
        match err {
            Error::UnknownStrategy { available, .. } => assert_eq!(available, "tri, sq"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_panic() {
        let _ = registry().register("tri", "again", |_| Box::new(Tri));
    }
}
