use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Airborne,
    Spaceborne,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Plume,
    Background,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Rejected,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Airborne, Domain::Spaceborne];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Airborne => "airborne",
            Domain::Spaceborne => "spaceborne",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::Airborne => Domain::Spaceborne,
            Domain::Spaceborne => Domain::Airborne,
        }
    }
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Plume => "plume",
            Label::Background => "background",
        }
    }

    pub fn is_plume(self) -> bool {
        self == Label::Plume
    }

    pub fn from_bool(plume: bool) -> Label {
        if plume {
            Label::Plume
        } else {
            Label::Background
        }
    }
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Rejected => "rejected",
        }
    }
}

macro_rules! str_enum {
    ($t:ty, $($s:literal => $v:expr),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(format!("unknown {} '{}'", stringify!($t).to_lowercase(), other)),
                }
            }
        }
    };
}

str_enum!(Domain, "airborne" => Domain::Airborne, "spaceborne" => Domain::Spaceborne);
str_enum!(Label, "plume" => Label::Plume, "background" => Label::Background);
str_enum!(Split, "train" => Split::Train, "val" => Split::Val, "test" => Split::Test, "rejected" => Split::Rejected);
