import { z } from 'zod';

export const POOLINGS = ['mean', 'last_token'] as const;

export const EmbedRequestSchema = z
  .object({
    id: z.string().min(1),
    text: z.string(),
    images: z.array(z.string()).default([]),
    pooling: z.enum(POOLINGS).default('mean'),
    normalize: z.boolean().default(true),
  })
  .strict();

export type EmbedRequest = z.infer<typeof EmbedRequestSchema>;

export const EmbedResponseSchema = z
  .object({
    id: z.string(),
    embedding: z.array(z.number()),
    dim: z.number().int().positive(),
    truncated_images: z.boolean(),
    model_tag: z.string(),
  })
  .strict()
  .refine((r) => r.embedding.length === r.dim && r.embedding.every(Number.isFinite), {
    message: 'embedding length must equal dim and every value must be finite',
  });

export type EmbedResponse = z.infer<typeof EmbedResponseSchema>;

export const HealthSchema = z
  .object({
    status: z.literal('ok'),
    dim: z.number().int().positive(),
    model_tag: z.string(),
  })
  .strict();

export type Health = z.infer<typeof HealthSchema>;
