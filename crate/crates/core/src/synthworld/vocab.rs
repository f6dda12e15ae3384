use crate::error::{Error, Result};
use crate::synthworld::scene::{Color, ObjectSpec, SceneSpec, Shape};

pub const PAD: u16 = 0;
pub const BOS: u16 = 1;
pub const EOS: u16 = 2;
pub const TOK_A: u16 = 3;
pub const TOK_AND: u16 = 4;
const COLOR_BASE: u16 = 5;
const SHAPE_BASE: u16 = 13;
pub const VOCAB_SIZE: usize = 16;
/// Longest sequence the encoder accepts.
pub const MAX_LEN: usize = 12;
/// Marker for an absent slot in serialized templates.
pub const NO_SLOT: u16 = 0xFFFF;

pub fn color_token(c: Color) -> u16 {
    COLOR_BASE + c.index() as u16
}

pub fn shape_token(s: Shape) -> u16 {
    SHAPE_BASE + s.index() as u16
}

pub fn token_color(t: u16) -> Option<Color> {
    (COLOR_BASE..SHAPE_BASE)
        .contains(&t)
        .then(|| Color::ALL[(t - COLOR_BASE) as usize])
}

pub fn token_shape(t: u16) -> Option<Shape> {
    (SHAPE_BASE..SHAPE_BASE + 3)
        .contains(&t)
        .then(|| Shape::ALL[(t - SHAPE_BASE) as usize])
}

pub fn token_word(t: u16) -> Option<&'static str> {
    match t {
        PAD => Some("<pad>"),
        BOS => Some("<bos>"),
        EOS => Some("<eos>"),
        TOK_A => Some("a"),
        TOK_AND => Some("and"),
        _ => token_color(t)
            .map(Color::name)
            .or_else(|| token_shape(t).map(Shape::name)),
    }
}

fn word_token(w: &str) -> Result<u16> {
    match w {
        "a" => Ok(TOK_A),
        "and" => Ok(TOK_AND),
        _ => Color::ALL
            .iter()
            .find(|c| c.name() == w)
            .map(|&c| color_token(c))
            .or_else(|| Shape::ALL.iter().find(|s| s.name() == w).map(|&s| shape_token(s)))
            .ok_or_else(|| Error::Vocabulary(w.to_string())),
    }
}

/// `BOS w1 ... wk EOS` for a whitespace-separated prompt.
pub fn tokenize(text: &str) -> Result<Vec<u16>> {
    let mut out = vec![BOS];
    for w in text.split_whitespace() {
        out.push(word_token(w)?);
    }
    out.push(EOS);
    if out.len() > MAX_LEN {
        return Err(Error::OutOfRange {
            what: "prompt length",
            value: out.len().to_string(),
        });
    }
    Ok(out)
}

pub fn detokenize(tokens: &[u16]) -> Result<String> {
    let mut words = Vec::new();
    for &t in tokens {
        if matches!(t, PAD | BOS | EOS) {
            continue;
        }
        words.push(token_word(t).ok_or_else(|| Error::Vocabulary(format!("id {t}")))?);
    }
    Ok(words.join(" "))
}

/// Token positions of the attribute and object words.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Slots {
    pub a1: Option<usize>,
    pub o1: Option<usize>,
    pub a2: Option<usize>,
    pub o2: Option<usize>,
}

/// All four slot positions of a two-object template.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairSlots {
    pub a1: usize,
    pub o1: usize,
    pub a2: usize,
    pub o2: usize,
}

impl Slots {
    pub fn as_array(&self) -> [Option<usize>; 4] {
        [self.a1, self.o1, self.a2, self.o2]
    }

    pub fn pair(&self) -> Result<PairSlots> {
        Ok(PairSlots {
            a1: self.a1.ok_or(Error::MissingSlots("a1"))?,
            o1: self.o1.ok_or(Error::MissingSlots("o1"))?,
            a2: self.a2.ok_or(Error::MissingSlots("a2"))?,
            o2: self.o2.ok_or(Error::MissingSlots("o2"))?,
        })
    }
}

/// Tokenized prompt with tagged slot positions.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PromptTemplate {
    pub tokens: Vec<u16>,
    pub slots: Slots,
}

impl PromptTemplate {
    /// Validating constructor: slots must be ordered and in range.
    pub fn new(tokens: Vec<u16>, slots: Slots) -> Result<Self> {
        if tokens.is_empty() || tokens.len() > MAX_LEN {
            return Err(Error::OutOfRange {
                what: "token count",
                value: tokens.len().to_string(),
            });
        }
        let present: Vec<usize> = slots.as_array().into_iter().flatten().collect();
        if present.windows(2).any(|w| w[0] >= w[1]) || present.iter().any(|&p| p >= tokens.len()) {
            return Err(Error::Format(format!("bad slot layout {slots:?} for {} tokens", tokens.len())));
        }
        Ok(Self { tokens, slots })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        detokenize(&self.tokens).unwrap_or_default()
    }

    /// Parse `BOS a C S [and a C S] EOS` back into the scene it describes.
    pub fn scene(&self) -> Result<SceneSpec> {
        let obj = |a: Option<usize>, o: Option<usize>| -> Result<Option<ObjectSpec>> {
            match (a, o) {
                (Some(a), Some(o)) => {
                    let c = token_color(self.tokens[a])
                        .ok_or_else(|| Error::Vocabulary(format!("expected colour at {a}")))?;
                    let s = token_shape(self.tokens[o])
                        .ok_or_else(|| Error::Vocabulary(format!("expected shape at {o}")))?;
                    Ok(Some(ObjectSpec::new(c, s)))
                }
                (None, None) => Ok(None),
                _ => Err(Error::MissingSlots("attribute/object pair")),
            }
        };
        let left = obj(self.slots.a1, self.slots.o1)?.ok_or(Error::MissingSlots("a1"))?;
        let right = obj(self.slots.a2, self.slots.o2)?;
        Ok(SceneSpec { left, right })
    }

    /// Recover the template of a token sequence produced by [`make_prompt`].
    pub fn parse(tokens: &[u16]) -> Result<Self> {
        let text = detokenize(tokens)?;
        let words: Vec<&str> = text.split_whitespace().collect();
        let spec = match words.as_slice() {
            ["a", c, s] => SceneSpec::single(parse_object(c, s)?),
            ["a", c1, s1, "and", "a", c2, s2] => SceneSpec {
                left: parse_object(c1, s1)?,
                right: Some(parse_object(c2, s2)?),
            },
            _ => return Err(Error::Format(format!("unrecognised prompt {text:?}"))),
        };
        let t = make_prompt(&spec)?;
        if t.tokens != tokens {
            return Err(Error::Format(format!("non-canonical token sequence for {text:?}")));
        }
        Ok(t)
    }
}

fn parse_object(c: &str, s: &str) -> Result<ObjectSpec> {
    let color = Color::ALL
        .into_iter()
        .find(|x| x.name() == c)
        .ok_or_else(|| Error::Vocabulary(c.to_string()))?;
    let shape = Shape::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| Error::Vocabulary(s.to_string()))?;
    Ok(ObjectSpec::new(color, shape))
}

/// `"a {c1} {s1} and a {c2} {s2}"` (or the single-object prefix) with slots.
pub fn make_prompt(spec: &SceneSpec) -> Result<PromptTemplate> {
    let tokens = tokenize(&spec.to_string())?;
    let slots = if spec.is_pair() {
        Slots {
            a1: Some(2),
            o1: Some(3),
            a2: Some(6),
            o2: Some(7),
        }
    } else {
        Slots {
            a1: Some(2),
            o1: Some(3),
            ..Slots::default()
        }
    };
    PromptTemplate::new(tokens, slots)
}
