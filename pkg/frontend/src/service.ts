import express from 'express';
import type { NextFunction, Request, Response } from 'express';
import { HashEncoder } from './encoder.js';
import { decodeBase64Strict } from './base64.js';
import { EmbedRequestSchema } from './schema.js';

export interface ServiceOptions {
  /** JSON body cap; oversized requests get 413 payload_too_large. */
  maxBodyBytes?: number;
}

/**
 * Wire protocol:
 *   POST /v1/embed   EmbedRequest JSON -> EmbedResponse JSON
 *   GET  /v1/health  -> {status:'ok', dim, model_tag}
 *
 * Errors: 400 bad_request (schema) / bad_image (undecodable base64),
 * 413 payload_too_large, 503 model_not_loaded. `dim` and `model_tag`
 * are fixed for the life of the process.
 */
export function createApp(encoder: HashEncoder | null, options: ServiceOptions = {}) {
  const app = express();
  app.use(express.json({ limit: options.maxBodyBytes ?? 8 * 1024 * 1024 }));

  app.get('/v1/health', (_req, res) => {
    if (!encoder) {
      res.status(503).json({ error: 'model_not_loaded' });
      return;
    }
    res.json({ status: 'ok', dim: encoder.dim, model_tag: encoder.modelTag });
  });

  app.post('/v1/embed', (req, res) => {
    if (!encoder) {
      res.status(503).json({ error: 'model_not_loaded' });
      return;
    }
    const parsed = EmbedRequestSchema.safeParse(req.body);
    if (!parsed.success) {
      res.status(400).json({
        error: 'bad_request',
        detail: parsed.error.issues[0]?.message ?? 'invalid request',
      });
      return;
    }
    const request = parsed.data;

    const images: Buffer[] = [];
    for (const [i, payload] of request.images.entries()) {
      const bytes = decodeBase64Strict(payload);
      if (bytes === null) {
        res.status(400).json({
          error: 'bad_image',
          detail: `images[${i}] is not decodable base64`,
        });
        return;
      }
      images.push(bytes);
    }

    const { embedding, truncatedImages } = encoder.encode(
      request.text,
      images,
      request.pooling,
      request.normalize,
    );
    res.json({
      id: request.id,
      embedding: Array.from(embedding),
      dim: encoder.dim,
      truncated_images: truncatedImages,
      model_tag: encoder.modelTag,
    });
  });

  // express raises typed errors for body problems before our handlers run
  app.use((err: unknown, _req: Request, res: Response, next: NextFunction) => {
    const type = (err as { type?: string } | null)?.type;
    if (type === 'entity.too.large') {
      res.status(413).json({ error: 'payload_too_large' });
      return;
    }
    if (type === 'entity.parse.failed') {
      res.status(400).json({ error: 'bad_request', detail: 'body is not valid JSON' });
      return;
    }
    next(err);
  });

  return app;
}
