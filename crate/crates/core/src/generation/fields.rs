use crate::backend::ChatBackend;
use crate::generation::extract::parse_list_literal;
use crate::generation::manifest::{BatchCounters, StageManifest};
use crate::generation::prompts::PromptSet;
use crate::generation::GenerationError;
use crate::schema::FieldTree;

/// One field-list call seeded with `seed_fields`, then one subfield call per
/// field. An unparseable list is asked for once more before giving up.
pub fn generate_field_tree(
    backend: &dyn ChatBackend,
    prompts: &PromptSet,
    seed_fields: &[String],
    manifest: &mut StageManifest,
) -> Result<FieldTree, GenerationError> {
    let seeds: Vec<&str> = seed_fields.iter().map(String::as_str).collect();
    let prompt = prompts.field.fill(&seeds)?;
    let mut batch = BatchCounters::new("field_list");
    let names = ask_list(backend, &prompt, &mut batch)?;
    let mut tree = FieldTree::default();
    for name in &names {
        if name.is_empty() {
            batch.rejected += 1;
            continue;
        }
        let before = tree.fields.len();
        tree.add_field(name);
        if tree.fields.len() > before {
            batch.accepted += 1;
        } else {
            batch.deduped += 1;
        }
    }
    manifest.push_batch(batch);
    if tree.fields.is_empty() {
        manifest.reject("field_list", "field_list", vec!["EMPTY_TREE".into()], "no fields parsed");
        return Err(GenerationError::EmptyTree);
    }

    for idx in 0..tree.fields.len() {
        let field = tree.fields[idx].name.clone();
        let prompt = prompts.subfield.fill(&[&field])?;
        let mut batch = BatchCounters::new(format!("subfields:{field}"));
        let subfields = ask_list(backend, &prompt, &mut batch)?;
        if subfields.is_empty() {
            manifest.reject(&batch.label, &field, vec!["PARSE_FAILURE".into()], "no subfield list in reply");
        }
        for sub in &subfields {
            if sub.is_empty() {
                batch.rejected += 1;
            } else if tree.add_subfield(idx, sub) {
                batch.accepted += 1;
            } else {
                batch.deduped += 1;
            }
        }
        manifest.push_batch(batch);
    }
    Ok(tree)
}

fn ask_list(
    backend: &dyn ChatBackend,
    prompt: &str,
    batch: &mut BatchCounters,
) -> Result<Vec<String>, GenerationError> {
    for _ in 0..2 {
        batch.calls += 1;
        let reply = backend.complete(prompt)?;
        let items = parse_list_literal(&reply.response);
        if !items.is_empty() {
            batch.attempted += items.len();
            batch.parsed += items.len();
            return Ok(items);
        }
    }
    Ok(Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;

    fn seeds() -> Vec<String> {
        vec!["Science".into(), "Healthcare".into()]
    }

    #[test]
    fn two_fields_three_subfields_each() {
        let backend = ScriptedBackend::sequence([
            "field_list = [\"Food\", \"Travel\", \"food\"]",
            "[\"Restaurants\", \"Recipes\", \"Nutrition\"]",
            "subfield_list = ['Traffic', 'Taxi', 'Hotels', 'taxi']",
        ])
        .unwrap();
        let mut m = StageManifest::default();
        let tree = generate_field_tree(&backend, &PromptSet::shipped(), &seeds(), &mut m).unwrap();
        assert_eq!(tree.fields.len(), 2);
        assert_eq!(tree.subfield_count(), 6);
        assert!(tree.is_valid());
        assert_eq!(m.batches[0].deduped, 1);
        assert_eq!(m.batches[2].deduped, 1);
        assert_eq!(m.totals.accepted, 8);
    }

    #[test]
    fn empty_reply_is_retried_then_fails() {
        let backend = ScriptedBackend::sequence(["Sorry.", "Still no list."]).unwrap();
        let mut m = StageManifest::default();
        let err = generate_field_tree(&backend, &PromptSet::shipped(), &seeds(), &mut m).unwrap_err();
        assert_eq!(err, GenerationError::EmptyTree);
        assert_eq!(m.batches[0].calls, 2);

        let backend = ScriptedBackend::sequence(["oops", "[\"Art\"]", "[\"Painting\"]"]).unwrap();
        let tree = generate_field_tree(&backend, &PromptSet::shipped(), &seeds(), &mut StageManifest::default()).unwrap();
        assert_eq!(tree.pairs().collect::<Vec<_>>(), [("Art", "Painting")]);
    }

    #[test]
    fn seed_count_must_match_prompt() {
        let backend = ScriptedBackend::sequence(["[\"A\"]"]).unwrap();
        let err = generate_field_tree(&backend, &PromptSet::shipped(), &["One".into()], &mut StageManifest::default())
            .unwrap_err();
        assert_eq!(err.code(), "TEMPLATE_ERROR");
    }

    #[test]
    fn backend_errors_propagate() {
        let backend = ScriptedBackend::sequence(["[\"A\", \"B\"]", "[\"x\"]"]).unwrap();
        let err = generate_field_tree(&backend, &PromptSet::shipped(), &seeds(), &mut StageManifest::default())
            .unwrap_err();
        assert_eq!(err.code(), "SCRIPT_EXHAUSTED");
    }
}
