"""
Prompt Manager for the substitution toolkit
Handles loading and filling the prompt texts kept in prompts/.
"""

import os
from enum import Enum
from typing import Optional

DEFAULT_PROMPTS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "prompts")


class PromptType(Enum):
    """Types of prompts available in the system"""
    SUGGEST_UNRANKED = "suggest_unranked.txt"
    SUGGEST_RANKED = "suggest_ranked.txt"
    GPTSCORE_PARAPHRASE = "gptscore_paraphrase.txt"


# Placeholders are replaced literally; prompt texts contain JSON braces
SENTENCE_SLOT = "[s]"
ORIGINAL_SLOT = "{original}"
MODIFIED_SLOT = "{modified}"


class PromptManager:
    """Manages loading and accessing prompt texts"""

    def __init__(self, prompts_dir: Optional[str] = None):
        """
        Initialize the prompt manager.

        Args:
            prompts_dir: Directory containing prompt text files
        """
        self.prompts_dir = prompts_dir or DEFAULT_PROMPTS_DIR
        self._cache = {}

    def load_prompt(self, prompt_type: PromptType) -> str:
        """
        Load a prompt from file, with caching.

        Args:
            prompt_type: Type of prompt to load

        Returns:
            The prompt text, byte for byte as stored

        Raises:
            FileNotFoundError: If prompt file doesn't exist
        """
        # Check cache first
        if prompt_type in self._cache:
            return self._cache[prompt_type]

        file_path = os.path.join(self.prompts_dir, prompt_type.value)

        if not os.path.exists(file_path):
            raise FileNotFoundError(f"Prompt file not found: {file_path}")

        with open(file_path, 'r', encoding='utf-8', newline='') as f:
            prompt_text = f.read()

        self._cache[prompt_type] = prompt_text

        return prompt_text

    def get_suggestion_prompt(self, ranked: bool) -> str:
        """Get the word-usage suggestion prompt, with or without ranking"""
        return self.load_prompt(PromptType.SUGGEST_RANKED if ranked else PromptType.SUGGEST_UNRANKED)

    def get_paraphrase_template(self) -> str:
        """Get the paraphrase template used for prompted causal-LM scoring"""
        return self.load_prompt(PromptType.GPTSCORE_PARAPHRASE)

    def reload_prompts(self):
        """Clear cache and force reload of all prompts"""
        self._cache.clear()

    def render(self, prompt_type: PromptType, **fields) -> str:
        """
        Fill a prompt's slots literally.

        Args:
            prompt_type: Prompt to fill
            **fields: `sentence` for the suggestion prompts; `original` and
                `modified` for the paraphrase template
        """
        text = self.load_prompt(prompt_type)
        if prompt_type is PromptType.GPTSCORE_PARAPHRASE:
            return fill_paraphrase_template(text, fields["original"], fields["modified"])
        return text.replace(SENTENCE_SLOT, fields["sentence"])

    def render_suggestion_prompt(self, sentence_text: str, ranked: bool) -> str:
        """Fill the [s] slot with the sentence text."""
        prompt_type = PromptType.SUGGEST_RANKED if ranked else PromptType.SUGGEST_UNRANKED
        return self.render(prompt_type, sentence=sentence_text)


def fill_paraphrase_template(template: str, original: str, modified: str) -> str:
    """Fill {original} and {modified} without touching any other character."""
    return template.replace(ORIGINAL_SLOT, original).replace(MODIFIED_SLOT, modified)


def split_paraphrase_template(template: str, original: str):
    """
    Split a filled template into the conditioning prefix and the suffix after
    the {modified} slot.

    Returns:
        (prefix, suffix) strings; the modified text goes between them
    """
    if MODIFIED_SLOT not in template:
        raise ValueError(f"template has no {MODIFIED_SLOT} slot")
    head, tail = template.split(MODIFIED_SLOT, 1)
    return head.replace(ORIGINAL_SLOT, original), tail.replace(ORIGINAL_SLOT, original)
