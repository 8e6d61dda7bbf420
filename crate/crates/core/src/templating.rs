//! Cloze template parsing, subject substitution and query assembly.

use thiserror::Error;

use crate::model::{
    is_punctuation_char, ClozeQuery, ClozeTemplate, EntityContextPair, TokenSequence,
    OBJECT_PLACEHOLDER, SUBJECT_PLACEHOLDER,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template is missing the {0} placeholder")]
    MissingPlaceholder(&'static str),
    #[error("template contains {0} more than once")]
    DuplicatePlaceholder(&'static str),
    #[error("subject entity is empty")]
    EmptyEntity,
    #[error("context is empty")]
    EmptyContext,
}

/// Splits on whitespace, then peels leading and trailing punctuation
/// characters off each chunk as separate tokens. Any of the `protected`
/// forms (placeholders, mask tokens) is kept intact even though it is made
/// of bracket characters.
pub fn tokenize_with(text: &str, protected: &[&str]) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        let mut trailing = Vec::new();
        loop {
            if rest.is_empty() {
                break;
            }
            if protected.contains(&rest) {
                out.push(rest.to_string());
                rest = "";
                break;
            }
            let first = rest.chars().next().unwrap();
            if is_punctuation_char(first) && !protected.iter().any(|p| rest.starts_with(p)) {
                out.push(first.to_string());
                rest = &rest[first.len_utf8()..];
                continue;
            }
            let last = rest.chars().next_back().unwrap();
            if is_punctuation_char(last) && !protected.iter().any(|p| rest.ends_with(p)) {
                trailing.push(last.to_string());
                rest = &rest[..rest.len() - last.len_utf8()];
                continue;
            }
            break;
        }
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

/// [`tokenize_with`] protecting the template placeholders.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with(text, &[SUBJECT_PLACEHOLDER, OBJECT_PLACEHOLDER])
}

fn find_unique(tokens: &[String], marker: &'static str) -> Result<usize, TemplateError> {
    let mut hits = tokens.iter().enumerate().filter(|(_, t)| *t == marker).map(|(i, _)| i);
    let first = hits.next().ok_or(TemplateError::MissingPlaceholder(marker))?;
    if hits.next().is_some() {
        return Err(TemplateError::DuplicatePlaceholder(marker));
    }
    Ok(first)
}

pub fn parse_template(raw: &str) -> Result<ClozeTemplate, TemplateError> {
    let tokens = tokenize(raw);
    let subject_index = find_unique(&tokens, SUBJECT_PLACEHOLDER)?;
    let object_index = find_unique(&tokens, OBJECT_PLACEHOLDER)?;
    Ok(ClozeTemplate {
        tokens: tokens.into(),
        subject_index,
        object_index,
    })
}

/// `t(e)`: the template with the subject placeholder replaced by every
/// entity token and the object placeholder retained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilledTemplate {
    tokens: TokenSequence,
    object_index: usize,
}

impl FilledTemplate {
    pub fn tokens(&self) -> &TokenSequence {
        &self.tokens
    }

    pub fn object_index(&self) -> usize {
        self.object_index
    }

    /// Template tokens that carry meaning for scoring: everything but the
    /// object placeholder.
    pub fn content_tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.object_index)
            .map(|(_, t)| t.as_str())
    }
}

pub fn substitute_subject(
    template: &ClozeTemplate,
    entity: &[String],
) -> Result<FilledTemplate, TemplateError> {
    if entity.is_empty() {
        return Err(TemplateError::EmptyEntity);
    }
    let sub = template.subject_index;
    let mut tokens = Vec::with_capacity(template.tokens.len() + entity.len() - 1);
    tokens.extend_from_slice(&template.tokens[..sub]);
    tokens.extend_from_slice(entity);
    tokens.extend_from_slice(&template.tokens[sub + 1..]);
    let object_index = if template.object_index > sub {
        template.object_index + entity.len() - 1
    } else {
        template.object_index
    };
    Ok(FilledTemplate {
        tokens: tokens.into(),
        object_index,
    })
}

/// Assembles `q(e, c) = [c, t(e)]` with `[OBJ]` replaced by `mask_token`.
pub fn build_query(
    pair: &EntityContextPair,
    template: &ClozeTemplate,
    mask_token: &str,
) -> Result<ClozeQuery, TemplateError> {
    let context = pair.context();
    if context.is_empty() {
        return Err(TemplateError::EmptyContext);
    }
    let filled = substitute_subject(template, pair.entity())?;
    Ok(query_from_filled(context, &filled, mask_token))
}

pub(crate) fn query_from_filled(
    context: &[String],
    filled: &FilledTemplate,
    mask_token: &str,
) -> ClozeQuery {
    let mut tokens = Vec::with_capacity(context.len() + filled.tokens.len());
    tokens.extend_from_slice(context);
    tokens.extend_from_slice(&filled.tokens);
    let mask_index = context.len() + filled.object_index;
    tokens[mask_index] = mask_token.to_string();
    ClozeQuery {
        tokens: tokens.into(),
        context_len: context.len(),
        mask_index,
    }
}

/// `q^{e,c}(v)`: the query with the mask replaced by `candidate`.
pub fn fill_object(query: &ClozeQuery, candidate: &str) -> TokenSequence {
    let mut tokens = query.tokens.as_slice().to_vec();
    tokens[query.mask_index] = candidate.to_string();
    tokens.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MASK: &str = "[MASK]";

    fn seq(tokens: &[&str]) -> TokenSequence {
        tokens.into()
    }

    /// Independent splice: rebuild the sequence token by token.
    fn splice_oracle(template: &[&str], entity: &[&str]) -> (Vec<String>, usize) {
        let mut out = Vec::new();
        let mut obj = None;
        for t in template {
            match *t {
                "[SUB]" => out.extend(entity.iter().map(|s| s.to_string())),
                "[OBJ]" => {
                    obj = Some(out.len());
                    out.push(t.to_string());
                }
                _ => out.push(t.to_string()),
            }
        }
        (out, obj.unwrap())
    }

    #[test]
    fn parse_drafted_by() {
        let t = parse_template("[SUB] was drafted by [OBJ]").unwrap();
        assert_eq!(t.subject_index(), 0);
        assert_eq!(t.object_index(), 4);
        let t = parse_template("[SUB] [OBJ]").unwrap();
        assert_eq!((t.subject_index(), t.object_index()), (0, 1));
    }

    #[test]
    fn parse_errors() {
        assert_eq!(
            parse_template("[SUB] born in"),
            Err(TemplateError::MissingPlaceholder("[OBJ]"))
        );
        assert_eq!(
            parse_template("born in [OBJ]"),
            Err(TemplateError::MissingPlaceholder("[SUB]"))
        );
        assert_eq!(
            parse_template("[SUB] and [SUB] met [OBJ]"),
            Err(TemplateError::DuplicatePlaceholder("[SUB]"))
        );
        assert_eq!(
            parse_template("[SUB] [OBJ] [OBJ]"),
            Err(TemplateError::DuplicatePlaceholder("[OBJ]"))
        );
    }

    #[test]
    fn tokenizer_peels_punctuation() {
        assert_eq!(tokenize("The Warriors drafted Steph Curry."), vec![
            "The", "Warriors", "drafted", "Steph", "Curry", "."
        ]);
        assert_eq!(tokenize("(born [OBJ])."), vec!["(", "born", "[OBJ]", ")", "."]);
        assert_eq!(tokenize("\"[SUB]\" is"), vec!["\"", "[SUB]", "\"", "is"]);
        assert_eq!(tokenize("U.S. don't"), vec!["U.S", ".", "don't"]);
        assert_eq!(tokenize("..."), vec![".", ".", "."]);
        assert_eq!(tokenize("  "), Vec::<String>::new());
    }

    #[test]
    fn substitute_examples() {
        let t = parse_template("[SUB] was drafted by [OBJ]").unwrap();
        let f = substitute_subject(&t, &seq(&["Stephen", "Curry"])).unwrap();
        assert_eq!(f.tokens(), &seq(&["Stephen", "Curry", "was", "drafted", "by", "[OBJ]"]));
        assert_eq!(f.object_index(), 5);

        let t = parse_template("[SUB] [OBJ]").unwrap();
        let f = substitute_subject(&t, &seq(&["x"])).unwrap();
        assert_eq!(f.tokens(), &seq(&["x", "[OBJ]"]));
        assert_eq!(f.object_index(), 1);

        let t = parse_template("[OBJ] of [SUB]").unwrap();
        let f = substitute_subject(&t, &seq(&["a", "b", "c"])).unwrap();
        let (oracle, obj) = splice_oracle(&["[OBJ]", "of", "[SUB]"], &["a", "b", "c"]);
        assert_eq!(f.tokens().as_slice(), &oracle[..]);
        assert_eq!(f.object_index(), obj);
        assert_eq!(f.object_index(), 0);

        assert_eq!(substitute_subject(&t, &[]), Err(TemplateError::EmptyEntity));
    }

    #[test]
    fn build_query_curry() {
        let pair = EntityContextPair::new(
            "drafted_by",
            seq(&["Stephen", "Curry"]),
            seq(&["The", "Warriors", "drafted", "Steph", "Curry", "."]),
        )
        .unwrap();
        let t = parse_template("[SUB] was drafted by [OBJ]").unwrap();
        let q = build_query(&pair, &t, MASK).unwrap();
        assert_eq!(q.tokens().len(), 12);
        assert_eq!(q.context_len(), 6);
        assert_eq!(q.mask_index(), 11);
        assert_eq!(q.mask_token(), MASK);

        let filled = fill_object(&q, "Warriors");
        let mut expected = q.tokens().as_slice().to_vec();
        expected[11] = "Warriors".into();
        assert_eq!(filled.as_slice(), &expected[..]);
    }

    #[test]
    fn build_query_minimal_and_empty() {
        let t = parse_template("[SUB] [OBJ]").unwrap();
        let pair = EntityContextPair::new("r", seq(&["e"]), seq(&["a"])).unwrap();
        let q = build_query(&pair, &t, MASK).unwrap();
        assert_eq!(q.tokens(), &seq(&["a", "e", MASK]));
        assert_eq!(q.mask_index(), 2);
        assert_eq!(fill_object(&q, "b"), seq(&["a", "e", "b"]));

        let empty = EntityContextPair::new("r", seq(&["e"]), seq(&[])).unwrap();
        assert_eq!(build_query(&empty, &t, MASK), Err(TemplateError::EmptyContext));
    }

    fn word() -> impl Strategy<Value = String> {
        "[a-z]{1,6}"
    }

    proptest! {
        #[test]
        fn query_shape_invariants(
            context in prop::collection::vec(word(), 1..10),
            entity in prop::collection::vec(word(), 1..4),
            mut words in prop::collection::vec(word(), 0..6),
            sub_pos in 0usize..8,
            obj_pos in 0usize..8,
            candidate in word(),
        ) {
            let sub_pos = sub_pos.min(words.len());
            words.insert(sub_pos, "[SUB]".into());
            let obj_pos = obj_pos.min(words.len());
            words.insert(obj_pos, "[OBJ]".into());
            let raw = words.join(" ");
            let template = parse_template(&raw).unwrap();

            let (oracle, oracle_obj) = splice_oracle(
                &words.iter().map(String::as_str).collect::<Vec<_>>(),
                &entity.iter().map(String::as_str).collect::<Vec<_>>(),
            );
            let filled = substitute_subject(&template, &entity).unwrap();
            prop_assert_eq!(filled.tokens().as_slice(), &oracle[..]);
            prop_assert_eq!(filled.object_index(), oracle_obj);

            let pair = EntityContextPair::new("r", entity.clone().into(), context.clone().into()).unwrap();
            let q = build_query(&pair, &template, MASK).unwrap();
            prop_assert_eq!(q.tokens().len(), context.len() + template.tokens().len() + entity.len() - 1);
            prop_assert!(q.mask_index() >= q.context_len());
            prop_assert!(q.mask_index() < q.tokens().len());
            prop_assert_eq!(q.context(), &context[..]);
            prop_assert_eq!(q.mask_token(), MASK);

            let filled_q = fill_object(&q, &candidate);
            prop_assert_eq!(filled_q.len(), q.tokens().len());
            for (i, (a, b)) in filled_q.iter().zip(q.tokens().iter()).enumerate() {
                if i == q.mask_index() {
                    prop_assert_eq!(a, &candidate);
                } else {
                    prop_assert_eq!(a, b);
                }
            }
        }
    }
}
