//! Per-report extraction: render, complete, recover the form, normalize.

use thiserror::Error;

use crate::form_parser::{FilledForm, FormError, FormParser};
use crate::llm_client::{Exchange, LlmClient, LlmError};
use crate::normalize::Normalizer;
use crate::prompting::{render_prompt, PromptTemplate};
use crate::schema::{question_schema, QuestionSpec, Report, StructuredRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Form(#[from] FormError),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Llm(_) => "complete",
            PipelineError::Form(_) => "extract_form",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub exchange: Exchange,
    pub form: FilledForm,
    pub record: StructuredRecord,
}

/// A failed report; `exchange` is kept when the backend did answer.
#[derive(Debug)]
pub struct ExtractionFailure {
    pub report_id: String,
    pub exchange: Option<Box<Exchange>>,
    pub error: PipelineError,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    template: PromptTemplate,
    parser: FormParser,
    normalizer: Normalizer,
    schema: Vec<QuestionSpec>,
}

impl Pipeline {
    pub fn new(template: PromptTemplate, parser: FormParser, normalizer: Normalizer) -> Self {
        Pipeline {
            template,
            parser,
            normalizer,
            schema: question_schema(),
        }
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    /// Turns a raw response into a record.
    pub fn interpret(
        &self,
        report_id: &str,
        response: &str,
    ) -> Result<(FilledForm, StructuredRecord), FormError> {
        let mut form = self.parser.extract_form(response, &self.schema)?;
        form.report_id = report_id.to_string();
        let record = self.normalizer.postprocess(&form);
        Ok((form, record))
    }

    pub fn extract(
        &self,
        report: &Report,
        client: &LlmClient,
    ) -> Result<Extraction, ExtractionFailure> {
        let prompt = render_prompt(report, &self.template);
        let exchange = client.complete(&prompt).map_err(|e| ExtractionFailure {
            report_id: report.id.clone(),
            exchange: None,
            error: e.into(),
        })?;
        match self.interpret(&report.id, &exchange.response_body) {
            Ok((form, record)) => Ok(Extraction {
                exchange,
                form,
                record,
            }),
            Err(e) => Err(ExtractionFailure {
                report_id: report.id.clone(),
                exchange: Some(Box::new(exchange)),
                error: e.into(),
            }),
        }
    }
}
