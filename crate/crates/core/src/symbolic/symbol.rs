use std::fmt;
use std::sync::Arc;

/// Family of the undetermined coefficients of an ansatz vector field.
///
/// `f` multiplies `∂/∂q_i` for `i < k`, `F` multiplies `∂/∂q_i` for `i ≥ k`
/// and `G` multiplies `∂/∂p^i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnknownKind {
    LowF,
    HighF,
    G,
}

/// A scalar symbol: a chart coordinate, an ansatz unknown or a parameter.
///
/// `comp` is the 1-based configuration index for vector charts and 0 for
/// scalar charts (n = 1), which only changes how the symbol prints.
/// The derived order puts every `q` before every `p`, each lexicographic in
/// `(order, comp)`, which is also the basis order used by differential forms.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Q { order: u16, comp: u16 },
    P { order: u16, comp: u16 },
    Unknown { kind: UnknownKind, order: u16, comp: u16 },
    Param(Arc<str>),
}

impl Symbol {
    pub fn q(order: usize, comp: usize) -> Symbol {
        Symbol::Q { order: order as u16, comp: comp as u16 }
    }

    pub fn p(order: usize, comp: usize) -> Symbol {
        Symbol::P { order: order as u16, comp: comp as u16 }
    }

    pub fn unknown(kind: UnknownKind, order: usize, comp: usize) -> Symbol {
        Symbol::Unknown { kind, order: order as u16, comp: comp as u16 }
    }

    pub fn param(name: &str) -> Symbol {
        Symbol::Param(Arc::from(name))
    }

    pub fn is_q(&self) -> bool {
        matches!(self, Symbol::Q { .. })
    }

    pub fn is_p(&self) -> bool {
        matches!(self, Symbol::P { .. })
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, Symbol::Unknown { .. })
    }

    pub fn is_param(&self) -> bool {
        matches!(self, Symbol::Param(_))
    }

    pub fn is_coordinate(&self) -> bool {
        self.is_q() || self.is_p()
    }

    /// Order index `i` of `q_i`, `p^i` or an unknown.
    pub fn order(&self) -> Option<usize> {
        match self {
            Symbol::Q { order, .. } | Symbol::P { order, .. } | Symbol::Unknown { order, .. } => {
                Some(*order as usize)
            }
            Symbol::Param(_) => None,
        }
    }

    pub fn comp(&self) -> Option<usize> {
        match self {
            Symbol::Q { comp, .. } | Symbol::P { comp, .. } | Symbol::Unknown { comp, .. } => {
                Some(*comp as usize)
            }
            Symbol::Param(_) => None,
        }
    }

    /// Same family and component, order shifted by one (`q_i -> q_{i+1}`).
    pub fn raised(&self) -> Option<Symbol> {
        match self {
            Symbol::Q { order, comp } => Some(Symbol::Q { order: order + 1, comp: *comp }),
            _ => None,
        }
    }

    /// Rank used by the polynomial term order: coordinates are more
    /// significant than unknowns, which are more significant than parameters.
    pub(crate) fn rank(&self) -> u8 {
        match self {
            Symbol::Q { .. } => 0,
            Symbol::P { .. } => 1,
            Symbol::Unknown { .. } => 2,
            Symbol::Param(_) => 4,
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = |comp: u16| if comp == 0 { String::new() } else { format!("_{comp}") };
        match self {
            Symbol::Q { order, comp } => write!(f, "q{order}{}", suffix(*comp)),
            Symbol::P { order, comp } => write!(f, "p{order}{}", suffix(*comp)),
            Symbol::Unknown { kind, order, comp } => {
                let c = match kind {
                    UnknownKind::LowF => "f",
                    UnknownKind::HighF => "F",
                    UnknownKind::G => "G",
                };
                write!(f, "{c}{order}{}", suffix(*comp))
            }
            Symbol::Param(name) => f.write_str(name),
        }
    }
}

impl serde::Serialize for Symbol {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}
