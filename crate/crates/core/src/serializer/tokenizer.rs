/// Token ids: raw bytes `0..=255`, then the specials.
pub type TokenId = u32;

pub const VOCAB_SIZE: usize = 261;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpecialToken {
    Bos,
    Eos,
    ImgOpen,
    ImgClose,
    Pad,
}

impl SpecialToken {
    pub const ALL: [SpecialToken; 5] =
        [SpecialToken::Bos, SpecialToken::Eos, SpecialToken::ImgOpen, SpecialToken::ImgClose, SpecialToken::Pad];

    pub const fn id(self) -> TokenId {
        match self {
            SpecialToken::Bos => 256,
            SpecialToken::Eos => 257,
            SpecialToken::ImgOpen => 258,
            SpecialToken::ImgClose => 259,
            SpecialToken::Pad => 260,
        }
    }

    pub fn from_id(id: TokenId) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            SpecialToken::Bos => "<bos>",
            SpecialToken::Eos => "<eos>",
            SpecialToken::ImgOpen => "<img>",
            SpecialToken::ImgClose => "</img>",
            SpecialToken::Pad => "<pad>",
        }
    }
}

/// One token per UTF-8 byte.
pub fn tokenize_text(s: &str) -> Vec<TokenId> {
    s.bytes().map(TokenId::from).collect()
}

/// Inverse of [`tokenize_text`]; special tokens are dropped.
pub fn detokenize(ids: &[TokenId]) -> String {
    let bytes: Vec<u8> = ids.iter().filter(|&&i| i < 256).map(|&i| i as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_values() {
        assert!(tokenize_text("").is_empty());
        assert_eq!(tokenize_text("Hi"), vec![72, 105]);
    }

    #[test]
    fn specials_sit_above_bytes() {
        for s in SpecialToken::ALL {
            assert!(s.id() >= 256 && (s.id() as usize) < VOCAB_SIZE);
            assert_eq!(SpecialToken::from_id(s.id()), Some(s));
        }
        assert_eq!(detokenize(&[SpecialToken::Bos.id(), 72, SpecialToken::Eos.id()]), "H");
    }

    proptest! {
        #[test]
        fn roundtrip(s in "\\PC*") {
            prop_assert_eq!(detokenize(&tokenize_text(&s)), s);
        }
    }
}
