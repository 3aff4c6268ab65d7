/* tslint:disable */
/* eslint-disable */

/**
 * A synthetic clip passed through MESTOR.
 */
export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    height(): number;
    constructor(kind: string, seed: bigint, velocity: number, noise_rate: number, size: number);
    /**
     * Channel `st`, `s` or `t` as RGBA bytes for an `ImageData`.
     */
    rgba(name: string): Uint8Array;
    stats_json(): string;
    width(): number;
}

/**
 * Energy of one table row under all three models; `expected_mj` below zero
 * means no reference value.
 */
export function energy_json(model: string, op_giga: number, rate: number, k: number, expected_mj: number): string;

/**
 * Spike train, thresholds and decoded value of `value` as JSON.
 */
export function fsn_json(value: number, alpha: number, k: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly energy_json: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly fsn_json: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scene_height: (a: number) => number;
    readonly scene_new: (a: number, b: number, c: bigint, d: number, e: number, f: number) => [number, number, number];
    readonly scene_rgba: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scene_stats_json: (a: number) => [number, number];
    readonly scene_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
