//! Validated identifiers for channels and coordinate frames.
//!
//! Both share one lexical rule: 1 to 255 bytes of UTF-8 with no whitespace
//! and no NUL. Equality is byte equality. A leading `/` is an ordinary
//! character and therefore significant (`/a1` and `a1` are different).

use alloc::sync::Arc;
use core::borrow::Borrow;
use core::fmt;
use core::str::FromStr;

/// Longest accepted name, in UTF-8 bytes.
pub const MAX_NAME_LEN: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameError {
    Empty,
    /// Encoded length in bytes.
    TooLong(usize),
    IllegalChar(char),
}

impl fmt::Display for NameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NameError::Empty => f.write_str("name is empty"),
            NameError::TooLong(len) => {
                write!(f, "name is {len} bytes, limit is {MAX_NAME_LEN}")
            }
            NameError::IllegalChar(c) => write!(f, "name contains illegal character {c:?}"),
        }
    }
}

impl core::error::Error for NameError {}

/// Checks `name` against the shared lexical rule.
pub fn validate(name: &str) -> Result<(), NameError> {
    if name.is_empty() {
        return Err(NameError::Empty);
    }
    if name.len() > MAX_NAME_LEN {
        return Err(NameError::TooLong(name.len()));
    }
    match name.chars().find(|c| c.is_whitespace() || *c == '\0') {
        Some(c) => Err(NameError::IllegalChar(c)),
        None => Ok(()),
    }
}

macro_rules! name_type {
    ($(#[$meta:meta])* $ty:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $ty(Arc<str>);

        impl $ty {
            pub fn new(name: &str) -> Result<Self, NameError> {
                validate(name)?;
                Ok(Self(Arc::from(name)))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl Borrow<str> for $ty {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl AsRef<str> for $ty {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:?})", stringify!($ty), &*self.0)
            }
        }

        impl FromStr for $ty {
            type Err = NameError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::new(s)
            }
        }

        impl TryFrom<&str> for $ty {
            type Error = NameError;

            fn try_from(s: &str) -> Result<Self, Self::Error> {
                Self::new(s)
            }
        }

        impl PartialEq<str> for $ty {
            fn eq(&self, other: &str) -> bool {
                &*self.0 == other
            }
        }

        impl PartialEq<&str> for $ty {
            fn eq(&self, other: &&str) -> bool {
                &*self.0 == *other
            }
        }
    };
}

name_type!(
    /// A named topic: the unit of routing for in-process fan-out and network
    /// export. Cloning is a reference-count bump.
    ChannelId
);

name_type!(
    /// Name of a coordinate frame in a [`FrameTree`](crate::FrameTree).
    FrameId
);
