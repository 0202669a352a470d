export const POST_PREFIX = 'This is a post';
export const NO_IMAGE_PHRASE = 'no image added with this post';
export const ONE_IMAGE_PHRASE = 'This is the image that goes with the post';
export const MULTI_IMAGE_PHRASE = 'These are the images that go with the post';
export const IMAGE_TOKEN = '<image>';

/**
 * Default prompt convention of the batch pipeline: prefix, title, body,
 * then the image phrase picked by count with one token per image, all
 * joined by single spaces. Blank title/body segments are dropped.
 */
export function renderPrompt(title: string, body: string, imageCount: number): string {
  const parts = [POST_PREFIX];
  const t = title.trim();
  if (t) parts.push(t);
  const b = body.trim();
  if (b) parts.push(b);
  if (imageCount === 0) {
    parts.push(NO_IMAGE_PHRASE);
  } else {
    parts.push(imageCount === 1 ? ONE_IMAGE_PHRASE : MULTI_IMAGE_PHRASE);
    for (let i = 0; i < imageCount; i++) parts.push(IMAGE_TOKEN);
  }
  return parts.join(' ');
}
