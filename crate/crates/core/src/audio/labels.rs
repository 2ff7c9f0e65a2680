//! The 25-class major/minor vocabulary shared by chords and keys.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

const SHARP_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Major,
    Minor,
}

/// A major or minor triad/key on one of 12 pitch classes, or "none".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HarmonyLabel {
    Tonal { root: u8, mode: Mode },
    None,
}

impl HarmonyLabel {
    pub const CLASSES: usize = 25;

    pub fn major(root: u8) -> Self {
        HarmonyLabel::Tonal {
            root: root % 12,
            mode: Mode::Major,
        }
    }

    pub fn minor(root: u8) -> Self {
        HarmonyLabel::Tonal {
            root: root % 12,
            mode: Mode::Minor,
        }
    }

    /// Class index: majors 0..12, minors 12..24, none 24.
    pub fn index(self) -> usize {
        match self {
            HarmonyLabel::Tonal { root, mode: Mode::Major } => root as usize,
            HarmonyLabel::Tonal { root, mode: Mode::Minor } => 12 + root as usize,
            HarmonyLabel::None => 24,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0..=11 => Some(Self::major(i as u8)),
            12..=23 => Some(Self::minor((i - 12) as u8)),
            24 => Some(HarmonyLabel::None),
            _ => None,
        }
    }

    pub fn all() -> impl Iterator<Item = HarmonyLabel> {
        (0..Self::CLASSES).filter_map(Self::from_index)
    }

    /// Chord-style name, e.g. `C:maj`, `A:min`, `none`.
    pub fn chord_name(self) -> String {
        match self {
            HarmonyLabel::Tonal { root, mode } => format!(
                "{}:{}",
                SHARP_NAMES[root as usize],
                if mode == Mode::Major { "maj" } else { "min" }
            ),
            HarmonyLabel::None => "none".to_string(),
        }
    }

    /// Key-style name, e.g. `C major`, `A minor`, `none`.
    pub fn key_name(self) -> String {
        match self {
            HarmonyLabel::Tonal { root, mode } => format!(
                "{} {}",
                SHARP_NAMES[root as usize],
                if mode == Mode::Major { "major" } else { "minor" }
            ),
            HarmonyLabel::None => "none".to_string(),
        }
    }

    /// Pitch classes of the root-position triad (root, third, fifth).
    pub fn triad(self) -> Option<[u8; 3]> {
        match self {
            HarmonyLabel::Tonal { root, mode } => {
                let third = if mode == Mode::Major { 4 } else { 3 };
                Some([root, (root + third) % 12, (root + 7) % 12])
            }
            HarmonyLabel::None => None,
        }
    }
}

impl fmt::Display for HarmonyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.chord_name())
    }
}

fn parse_root(s: &str) -> Option<u8> {
    let mut chars = s.chars();
    let letter = chars.next()?.to_ascii_uppercase();
    let base: i32 = match letter {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => return None,
    };
    let mut pc = base;
    for c in chars {
        match c {
            '#' => pc += 1,
            'b' => pc -= 1,
            _ => return None,
        }
    }
    Some(pc.rem_euclid(12) as u8)
}

impl FromStr for HarmonyLabel {
    type Err = Error;

    /// Accepts `C:maj`, `C#:min`, `Db:maj`, `C major`, `a minor`, `C`, `Am`,
    /// `none`, `N`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let t = s.trim();
        let unknown = || Error::UnknownLabel(s.to_string());
        if t.eq_ignore_ascii_case("none") || t == "N" || t == "X" {
            return Ok(HarmonyLabel::None);
        }
        let (root, mode) = if let Some((r, q)) = t.split_once(':') {
            let mode = match q {
                "maj" => Mode::Major,
                "min" => Mode::Minor,
                _ => return Err(unknown()),
            };
            (r, mode)
        } else if let Some((r, q)) = t.split_once(' ') {
            let mode = match q.trim().to_ascii_lowercase().as_str() {
                "major" | "maj" => Mode::Major,
                "minor" | "min" => Mode::Minor,
                _ => return Err(unknown()),
            };
            (r, mode)
        } else if let Some(r) = t.strip_suffix('m') {
            (r, Mode::Minor)
        } else {
            (t, Mode::Major)
        };
        let root = parse_root(root).ok_or_else(unknown)?;
        Ok(HarmonyLabel::Tonal { root, mode })
    }
}

/// Equal-temperament frequency of a MIDI note, A4 (69) = 440 Hz.
pub fn midi_to_hz(note: f64) -> f64 {
    440.0 * 2f64.powf((note - 69.0) / 12.0)
}
