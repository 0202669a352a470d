"""Render posts into prompt strings with inline image placeholder tokens.

Every rendered prompt starts with the standard prefix ``This is a post``,
then the title and body, then one of three closing phrases chosen by how
many images the post carries after any configured truncation:

* no images -- ``no image added with this post``
* one image -- ``This is the image that goes with the post`` plus one token
* several   -- ``These are the images that go with the post`` plus one
  token per retained image

Pieces are joined by a single separator with no added punctuation, so the
rendered text stays literally quotable.
"""

from __future__ import annotations

from dataclasses import dataclass

POST_PREFIX = "This is a post"
NO_IMAGE_PHRASE = "no image added with this post"
ONE_IMAGE_PHRASE = "This is the image that goes with the post"
MULTI_IMAGE_PHRASE = "These are the images that go with the post"

TOKEN_PLACEMENTS = ("after_phrase", "before_text")


@dataclass(frozen=True)
class TemplateConfig:
    """Controls the image-token convention used when rendering.

    ``after_phrase`` puts the token block right after the announcing
    phrase; ``before_text`` puts it after the post prefix and before the
    title/body, for experiments with token-precedes-caption conventions.
    ``end_chunk_token``, when set, terminates the rendered text (e.g. an
    end-of-chunk marker some vision-language models expect).
    """

    image_token: str = "<image>"
    end_chunk_token: str | None = None
    token_placement: str = "after_phrase"
    max_images: int | None = None
    separator: str = " "

    def __post_init__(self):
        if not self.image_token or any(c.isspace() for c in self.image_token):
            raise ValueError("image_token must be non-empty with no whitespace")
        if self.token_placement not in TOKEN_PLACEMENTS:
            raise ValueError(f"token_placement must be one of {TOKEN_PLACEMENTS}")
        if self.max_images is not None and self.max_images < 1:
            raise ValueError("max_images must be >= 1 when set")
        if self.end_chunk_token is not None and self.image_token in self.end_chunk_token:
            raise ValueError("end_chunk_token must not contain image_token")


@dataclass(frozen=True)
class TemplatedPost:
    """A rendered prompt plus the image references it actually mentions."""

    post_id: str
    text: str
    image_refs: tuple[str, ...]
    image_token_count: int


def render_template(post, config: TemplateConfig = TemplateConfig()) -> TemplatedPost:
    """Render one post; total over valid posts, deterministic.

    The token count in the text always equals the number of retained image
    references: min(len(post.images), max_images).  Truncation, if any, is
    visible to the caller as len(result.image_refs) < len(post.images).
    """
    refs = tuple(post.images)
    if config.max_images is not None:
        refs = refs[: config.max_images]

    tokens = [config.image_token] * len(refs)
    if len(refs) == 0:
        phrase = NO_IMAGE_PHRASE
    elif len(refs) == 1:
        phrase = ONE_IMAGE_PHRASE
    else:
        phrase = MULTI_IMAGE_PHRASE

    parts = [POST_PREFIX]
    if config.token_placement == "before_text":
        parts += tokens
    title = post.title.strip()
    body = post.body.strip()
    if title:
        parts.append(title)
    if body:
        parts.append(body)
    parts.append(phrase)
    if config.token_placement == "after_phrase":
        parts += tokens
    if config.end_chunk_token is not None:
        parts.append(config.end_chunk_token)

    return TemplatedPost(
        post_id=post.id,
        text=config.separator.join(parts),
        image_refs=refs,
        image_token_count=len(refs),
    )
