/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scenario_free: (a: number, b: number) => void;
export const mapExtent: () => [number, number];
export const mixtureImage: (a: number, b: number, c: number) => [number, number, number, number];
export const scenario_features: (a: number, b: number) => [number, number, number, number];
export const scenario_grid_n: (a: number) => number;
export const scenario_history: (a: number, b: number) => [number, number, number, number];
export const scenario_mapImage: (a: number, b: number) => [number, number, number, number];
export const scenario_map_pixels: (a: number) => number;
export const scenario_new: (a: number, b: number, c: bigint) => [number, number, number];
export const scenario_steps: (a: number) => number;
export const scenario_target: (a: number, b: number) => [number, number, number, number];
export const selectModes: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
