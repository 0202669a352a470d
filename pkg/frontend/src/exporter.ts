import { promises as fs } from 'node:fs';
import path from 'node:path';
import { HashEncoder, Pooling } from './encoder.js';
import { renderPrompt } from './template.js';
import { writeMatrix } from './embm.js';

export interface CorpusPost {
  id: string;
  title: string;
  body: string;
  images: string[];
}

export interface SkipEntry {
  id: string;
  reason: string;
}

export interface ExportResult {
  written: number;
  skipped: SkipEntry[];
  truncatedPosts: number;
  outPath: string;
}

export async function readCorpus(corpusPath: string): Promise<CorpusPost[]> {
  const raw = await fs.readFile(corpusPath, 'utf8');
  const posts: CorpusPost[] = [];
  for (const [lineNo, line] of raw.split('\n').entries()) {
    if (!line.trim()) continue;
    let doc: unknown;
    try {
      doc = JSON.parse(line);
    } catch {
      throw new Error(`${corpusPath}:${lineNo + 1}: not valid JSON`);
    }
    const post = doc as Partial<CorpusPost>;
    if (
      typeof post.id !== 'string' ||
      typeof post.title !== 'string' ||
      typeof post.body !== 'string' ||
      !Array.isArray(post.images)
    ) {
      throw new Error(`${corpusPath}:${lineNo + 1}: missing id/title/body/images`);
    }
    posts.push({ id: post.id, title: post.title, body: post.body, images: post.images });
  }
  return posts;
}

/**
 * Corpus-scale extraction: render each post's prompt, embed it with the
 * mounted encoder, and write the result in the batch pipeline's EMBM
 * format with the row<TAB>id sidecar. Posts whose image cannot be read
 * are skipped and reported in the skip list — never written as zero rows.
 * Multi-image posts embed their first image only (truncation is counted).
 */
export async function batchExport(
  corpusPath: string,
  imagesRoot: string,
  outPath: string,
  encoder: HashEncoder,
  opts: { pooling?: Pooling; normalize?: boolean; quiet?: boolean } = {},
): Promise<ExportResult> {
  const posts = await readCorpus(corpusPath);
  const rows: Float32Array[] = [];
  const ids: string[] = [];
  const skipped: SkipEntry[] = [];
  let truncatedPosts = 0;

  for (const post of posts) {
    let image: Buffer | null = null;
    if (post.images.length > 0) {
      const ref = post.images[0]!; // single-image policy: only the first is ever read
      try {
        image = await fs.readFile(path.resolve(imagesRoot, ref));
      } catch (err) {
        const code = (err as NodeJS.ErrnoException).code ?? String(err);
        skipped.push({ id: post.id, reason: `image ${ref}: ${code}` });
        continue;
      }
    }
    if (post.images.length > 1) truncatedPosts++;

    const text = renderPrompt(post.title, post.body, post.images.length);
    const { embedding } = encoder.encode(
      text,
      image ? [image] : [],
      opts.pooling ?? 'mean',
      opts.normalize ?? true,
    );
    rows.push(embedding);
    ids.push(post.id);
  }

  await writeMatrix(outPath, rows, ids, encoder.dim);
  if (!opts.quiet) {
    for (const skip of skipped) console.error(`skipped ${skip.id}: ${skip.reason}`);
  }
  return { written: rows.length, skipped, truncatedPosts, outPath };
}
