/* tslint:disable */
/* eslint-disable */

/**
 * A synthetic scenario prepared as one training sequence.
 */
export class Scenario {
    free(): void;
    [Symbol.dispose](): void;
    features(step: number): Float64Array;
    /**
     * Number of grid cells per side.
     */
    grid_n(): number;
    history(step: number): Float64Array;
    mapImage(step: number): Uint8Array;
    /**
     * Map image side length in pixels.
     */
    map_pixels(): number;
    constructor(kind: string, seed: bigint);
    steps(): number;
    target(step: number): Float64Array;
}

/**
 * Map extent `[x_min, x_max, y_min, y_max]` in meters.
 */
export function mapExtent(): Float64Array;

/**
 * Screen RGBA heatmap; the side lengths are `mapExtent` spans divided by
 * `resolution`.
 */
export function mixtureImage(components: Float64Array, resolution: number): Uint8Array;

export function selectModes(components: Float64Array, alpha: number, iou_threshold: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scenario_free: (a: number, b: number) => void;
    readonly mapExtent: () => [number, number];
    readonly mixtureImage: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scenario_features: (a: number, b: number) => [number, number, number, number];
    readonly scenario_grid_n: (a: number) => number;
    readonly scenario_history: (a: number, b: number) => [number, number, number, number];
    readonly scenario_mapImage: (a: number, b: number) => [number, number, number, number];
    readonly scenario_map_pixels: (a: number) => number;
    readonly scenario_new: (a: number, b: number, c: bigint) => [number, number, number];
    readonly scenario_steps: (a: number) => number;
    readonly scenario_target: (a: number, b: number) => [number, number, number, number];
    readonly selectModes: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
