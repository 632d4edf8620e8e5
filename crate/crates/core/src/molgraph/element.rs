use std::fmt;

/// Heavy elements supported by the kekulized, neutral SMILES subset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    C,
    N,
    O,
    S,
    P,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 9] = [
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::P,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
            Element::P => "P",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == s)
    }

    /// Maximum bond-order sum; the remaining slack is filled by implicit hydrogens.
    pub fn default_valence(self) -> u32 {
        match self {
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
            Element::S => 6,
            Element::P => 5,
            Element::F | Element::Cl | Element::Br | Element::I => 1,
        }
    }

    /// Standard atomic weight (IUPAC conventional values).
    pub fn mass(self) -> f64 {
        match self {
            Element::C => 12.011,
            Element::N => 14.007,
            Element::O => 15.999,
            Element::S => 32.06,
            Element::P => 30.974,
            Element::F => 18.998,
            Element::Cl => 35.45,
            Element::Br => 79.904,
            Element::I => 126.904,
        }
    }

    /// Lowest valence a bare (unbracketed) atom may take in standard SMILES.
    /// Used to write the implicit-hydrogen count of bracket atoms.
    pub(crate) fn implicit_h(self, bond_sum: u32) -> u32 {
        let levels: &[u32] = match self {
            Element::C => &[4],
            Element::N => &[3, 5],
            Element::O => &[2],
            Element::S => &[2, 4, 6],
            Element::P => &[3, 5],
            _ => &[1],
        };
        levels
            .iter()
            .find(|&&v| v >= bond_sum)
            .map(|v| v - bond_sum)
            .unwrap_or(0)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Node category: a real element or the dummy ("not present") slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    Dummy,
    Real(Element),
}

impl Atom {
    pub fn is_dummy(self) -> bool {
        matches!(self, Atom::Dummy)
    }

    pub fn element(self) -> Option<Element> {
        match self {
            Atom::Dummy => None,
            Atom::Real(e) => Some(e),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Atom::Dummy => "*",
            Atom::Real(e) => e.symbol(),
        }
    }

    /// Stable small integer used by canonical serialization: 0 for dummy, then table order.
    pub fn code(self) -> u8 {
        match self {
            Atom::Dummy => 0,
            Atom::Real(e) => 1 + Element::ALL.iter().position(|&x| x == e).unwrap() as u8,
        }
    }
}

impl From<Element> for Atom {
    fn from(e: Element) -> Self {
        Atom::Real(e)
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Edge category. `None` doubles as the dummy/empty bond slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    #[default]
    None,
    Single,
    Double,
    Triple,
}

impl BondOrder {
    pub const ALL: [BondOrder; 4] = [
        BondOrder::None,
        BondOrder::Single,
        BondOrder::Double,
        BondOrder::Triple,
    ];

    pub fn order(self) -> u32 {
        self as u32
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<BondOrder> {
        BondOrder::ALL.get(i).copied()
    }

    pub fn is_none(self) -> bool {
        self == BondOrder::None
    }

    pub fn smiles_symbol(self) -> &'static str {
        match self {
            BondOrder::None => "",
            BondOrder::Single => "-",
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
        }
    }
}

impl fmt::Display for BondOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BondOrder::None => "NONE",
            BondOrder::Single => "SINGLE",
            BondOrder::Double => "DOUBLE",
            BondOrder::Triple => "TRIPLE",
        };
        f.write_str(s)
    }
}
